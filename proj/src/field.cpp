#include "randpot/field.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace randpot {

namespace {

constexpr double kDefaultTailTol = 1e-12;

double max_cutoff(const std::vector<SingleSitePotential>& palette, double tol, int d) {
    double r = 0.0;
    for (const auto& s : palette) r = std::max(r, s.cutoff_radius(tol, d));
    return r;
}

double max_envelope(const std::vector<SingleSitePotential>& palette, double r, int d) {
    double e = 0.0;
    for (const auto& s : palette) e = std::max(e, s.envelope(r, d));
    return e;
}

}  // namespace

void PotentialField::finish_setup(double default_tol, std::optional<double> r_trunc) {
    const auto& palette = lat_ ? lat_->palette : poi_->palette;
    r_trunc_ = r_trunc ? *r_trunc : max_cutoff(palette, default_tol, d_);
    env_at_cutoff_ = max_envelope(palette, r_trunc_, d_);

    // faithful region: spatial extent of the window shrunk by the cutoff
    faithful_.lo = Vec(d_);
    faithful_.hi = Vec(d_);
    if (lat_) {
        // corners of the index box mapped through the basis
        Vec lo(d_), hi(d_);
        for (int k = 0; k < d_; ++k) {
            lo[k] = std::numeric_limits<double>::infinity();
            hi[k] = -std::numeric_limits<double>::infinity();
        }
        std::int64_t corners = std::int64_t{1} << d_;
        for (std::int64_t c = 0; c < corners; ++c) {
            IndexVec idx{};
            for (int k = 0; k < d_; ++k)
                idx[k] = (c >> k) & 1 ? lat_->window.hi[k] : lat_->window.lo[k];
            Vec p = lat_->basis.point(idx);
            for (int k = 0; k < d_; ++k) {
                lo[k] = std::min(lo[k], p[k]);
                hi[k] = std::max(hi[k], p[k]);
            }
        }
        for (int k = 0; k < d_; ++k) {
            faithful_.lo[k] = lo[k] + r_trunc_;
            faithful_.hi[k] = hi[k] - r_trunc_;
        }
        faithful_.bounded = true;
    } else if (poi_) {
        for (int k = 0; k < d_; ++k) {
            faithful_.lo[k] = poi_->win_lo[k] + r_trunc_;
            faithful_.hi[k] = poi_->win_hi[k] - r_trunc_;
        }
        faithful_.bounded = true;
    }

    // singular points in world coordinates
    if (lat_) {
        bool any_singular = false;
        for (const auto& s : lat_->palette) any_singular |= s.singular();
        if (any_singular) {
            IndexVec idx = lat_->window.lo;
            std::int64_t n = lat_->window.count();
            for (std::int64_t flat = 0; flat < n; ++flat) {
                const auto& site = lat_->palette[lat_->marks[static_cast<std::size_t>(flat)]];
                Vec base = lat_->basis.point(idx);
                for (const auto& sp : site.singular_points()) singular_points_.push_back(base + sp);
                for (int k = d_ - 1; k >= 0; --k) {
                    if (++idx[k] <= lat_->window.hi[k]) break;
                    idx[k] = lat_->window.lo[k];
                }
            }
        }
    } else if (poi_) {
        for (const auto& pt : poi_->points) {
            const auto& site = poi_->palette[static_cast<std::size_t>(pt.mark)];
            for (const auto& sp : site.singular_points()) singular_points_.push_back(pt.x + sp);
        }
        // bucket grid when the point set is large enough to matter
        if (poi_->points.size() > 48 && r_trunc_ > 0.0) {
            auto bk = std::make_shared<Buckets>();
            bk->origin = Vec(d_);
            for (int k = 0; k < d_; ++k) bk->origin[k] = poi_->win_lo[k] - 1.0;  // pad one unit
            bk->cell = r_trunc_;
            std::int64_t total = 1;
            for (int k = 0; k < d_; ++k) {
                double span = (poi_->win_hi[k] - poi_->win_lo[k]) + 2.0;
                bk->n[k] = std::max(1, static_cast<int>(std::ceil(span / bk->cell)));
                total *= bk->n[k];
            }
            if (total <= 4'000'000) {
                bk->bins.resize(static_cast<std::size_t>(total));
                for (std::size_t i = 0; i < poi_->points.size(); ++i) {
                    const Vec& x = poi_->points[i].x;
                    std::int64_t flat = 0;
                    for (int k = 0; k < d_; ++k) {
                        int c = static_cast<int>(std::floor((x[k] - bk->origin[k]) / bk->cell));
                        c = std::clamp(c, 0, bk->n[k] - 1);
                        flat = flat * bk->n[k] + c;
                    }
                    bk->bins[static_cast<std::size_t>(flat)].push_back(static_cast<std::int32_t>(i));
                }
                buckets_ = std::move(bk);
            }
        }
    }
}

PotentialField PotentialField::lattice(LatticeConfiguration cfg, std::optional<double> r_trunc) {
    cfg.validate();
    PotentialField f;
    f.d_ = cfg.dim();
    f.lat_ = std::make_shared<const LatticeConfiguration>(std::move(cfg));
    f.finish_setup(kDefaultTailTol, r_trunc);
    return f;
}

PotentialField PotentialField::points(PoissonConfiguration cfg, std::optional<double> r_trunc) {
    cfg.validate();
    PotentialField f;
    f.d_ = cfg.dim();
    f.poi_ = std::make_shared<const PoissonConfiguration>(std::move(cfg));
    f.finish_setup(kDefaultTailTol, r_trunc);
    return f;
}

PotentialField PotentialField::transformed(std::shared_ptr<const PotentialField> base, double alpha,
                                           const Mat& A, const Vec& b) {
    if (!base) throw ConfigError("transformed field: null base");
    PotentialField f;
    f.d_ = base->dim();
    f.base_ = std::move(base);
    f.alpha_ = alpha;
    f.tr_A_ = A;
    f.tr_b_ = b;
    // Faithful region maps through A^{-1}(box - b) which stays axis-aligned
    // only for diagonal A; otherwise report unbounded (checks then rely on
    // escape radii alone).
    bool diagonal = true;
    for (int i = 0; i < f.d_; ++i)
        for (int j = 0; j < f.d_; ++j)
            if (i != j && A(i, j) != 0.0) diagonal = false;
    FaithfulBox fb = f.base_->faithful_box();
    if (fb.bounded && diagonal) {
        f.faithful_.lo = Vec(f.d_);
        f.faithful_.hi = Vec(f.d_);
        for (int k = 0; k < f.d_; ++k) {
            double a = A(k, k);
            double u = (fb.lo[k] - b[k]) / a;
            double v = (fb.hi[k] - b[k]) / a;
            f.faithful_.lo[k] = std::min(u, v);
            f.faithful_.hi[k] = std::max(u, v);
        }
        f.faithful_.bounded = true;
    }
    f.r_trunc_ = f.base_->cutoff_radius();
    // pull singular points back: s' = A^{-1}(s - b)
    if (f.base_->has_singularities()) {
        Mat Ainv = A.inverse();
        for (const auto& s : f.base_->singular_points())
            f.singular_points_.push_back(Ainv * (s - b));
    }
    return f;
}

bool PotentialField::empty_source() const {
    if (base_) return base_->empty_source();
    if (lat_) {
        for (std::uint8_t m : lat_->marks)
            for (const auto& t : lat_->palette[m].terms)
                if (t.kind != SiteKind::zero && t.amplitude != 0.0) return false;
        return true;
    }
    if (poi_) return poi_->points.empty();
    return true;
}

FieldEval PotentialField::evaluate(const Vec& q, Need need) const {
    if (q.dim() != d_) throw ConfigError("field evaluation: dimension mismatch");
    FieldEval out(d_);

    if (base_) {
        Vec y = tr_A_ * q + tr_b_;
        FieldEval be = base_->evaluate(y, need);
        out.V = alpha_ * be.V;
        out.tail_bound = std::fabs(alpha_) * be.tail_bound;
        if (need != Need::value) {
            // grad = alpha A^T grad_base
            for (int i = 0; i < d_; ++i) {
                double s = 0.0;
                for (int j = 0; j < d_; ++j) s += tr_A_(j, i) * be.grad[j];
                out.grad[i] = alpha_ * s;
            }
        }
        if (need == Need::hessian) {
            // hess = alpha A^T H A
            for (int i = 0; i < d_; ++i)
                for (int j = 0; j < d_; ++j) {
                    double s = 0.0;
                    for (int a = 0; a < d_; ++a)
                        for (int b = 0; b < d_; ++b) s += tr_A_(a, i) * be.hess(a, b) * tr_A_(b, j);
                    out.hess(i, j) = alpha_ * s;
                }
            out.lap = out.hess.trace();
        }
        return out;
    }

    EvalAccum acc(d_);
    std::int64_t visited = 0;

    if (lat_) {
        const auto& L = *lat_;
        // candidate index box: |i_k - (B^{-1} q)_k| <= r_trunc * ||row_k(B^{-1})||
        Vec center = L.basis.coords(q);
        IndexVec blo{}, bhi{};
        for (int k = 0; k < d_; ++k) {
            double rn = 0.0;
            for (int j = 0; j < d_; ++j) rn += sqr(L.basis.inv_basis(k, j));
            rn = std::sqrt(rn) * r_trunc_;
            blo[k] = std::max(L.window.lo[k], static_cast<int>(std::ceil(center[k] - rn)));
            bhi[k] = std::min(L.window.hi[k], static_cast<int>(std::floor(center[k] + rn)));
            if (blo[k] > bhi[k]) {
                blo[k] = 1;
                bhi[k] = 0;
            }
        }
        bool nonempty = true;
        for (int k = 0; k < d_; ++k) nonempty &= (blo[k] <= bhi[k]);
        if (nonempty) {
            IndexVec idx = blo;
            const double r2max = r_trunc_ * r_trunc_;
            for (;;) {
                Vec rel = q - L.basis.point(idx);
                if (rel.norm2() <= r2max) {
                    L.palette[L.mark_at(idx)].accumulate(rel, need, acc);
                    ++visited;
                }
                int k = d_ - 1;
                for (; k >= 0; --k) {
                    if (++idx[k] <= bhi[k]) break;
                    idx[k] = blo[k];
                }
                if (k < 0) break;
            }
        }
        out.tail_bound = static_cast<double>(L.window.count() - visited) * env_at_cutoff_;
    } else if (poi_) {
        const auto& P = *poi_;
        const double r2max = r_trunc_ * r_trunc_;
        if (buckets_) {
            const Buckets& bk = *buckets_;
            IndexVec clo{}, chi{};
            for (int k = 0; k < d_; ++k) {
                clo[k] = std::max(0, static_cast<int>(std::floor((q[k] - r_trunc_ - bk.origin[k]) / bk.cell)));
                chi[k] = std::min(bk.n[k] - 1,
                                  static_cast<int>(std::floor((q[k] + r_trunc_ - bk.origin[k]) / bk.cell)));
                if (clo[k] > chi[k]) {
                    clo[k] = 1;
                    chi[k] = 0;
                }
            }
            bool nonempty = true;
            for (int k = 0; k < d_; ++k) nonempty &= (clo[k] <= chi[k]);
            if (nonempty) {
                IndexVec idx = clo;
                for (;;) {
                    std::int64_t flat = 0;
                    for (int k = 0; k < d_; ++k) flat = flat * bk.n[k] + idx[k];
                    for (std::int32_t pi : bk.bins[static_cast<std::size_t>(flat)]) {
                        const auto& pt = P.points[static_cast<std::size_t>(pi)];
                        Vec rel = q - pt.x;
                        if (rel.norm2() <= r2max) {
                            P.palette[static_cast<std::size_t>(pt.mark)].accumulate(rel, need, acc);
                            ++visited;
                        }
                    }
                    int k = d_ - 1;
                    for (; k >= 0; --k) {
                        if (++idx[k] <= chi[k]) break;
                        idx[k] = clo[k];
                    }
                    if (k < 0) break;
                }
            }
        } else {
            for (const auto& pt : P.points) {
                Vec rel = q - pt.x;
                if (rel.norm2() <= r2max) {
                    P.palette[static_cast<std::size_t>(pt.mark)].accumulate(rel, need, acc);
                    ++visited;
                }
            }
        }
        out.tail_bound = static_cast<double>(static_cast<std::int64_t>(P.points.size()) - visited) *
                         env_at_cutoff_;
    }

    out.V = acc.V;
    if (need != Need::value) out.grad = acc.grad;
    if (need == Need::hessian) {
        out.hess = acc.hess;
        out.lap = acc.lap;
    }
    return out;
}

RangeEstimate estimate_range(const PotentialField& field, const Vec& lo, const Vec& hi,
                             int nodes_per_axis, double excl_radius) {
    if (nodes_per_axis < 2) throw ConfigError("estimate_range: need at least 2 nodes per axis");
    const int d = field.dim();
    RangeEstimate est;
    est.vmin = std::numeric_limits<double>::infinity();
    est.vmax = -std::numeric_limits<double>::infinity();

    const auto& sing = field.singular_points();
    auto near_singularity = [&](const Vec& q) {
        for (const auto& s : sing)
            if ((q - s).norm() < excl_radius) return true;
        return false;
    };

    Vec best_min(d), best_max(d);
    IndexVec idx{};
    std::int64_t total = 1;
    for (int k = 0; k < d; ++k) total *= nodes_per_axis;
    for (std::int64_t f = 0; f < total; ++f) {
        Vec q(d);
        std::int64_t rem = f;
        for (int k = d - 1; k >= 0; --k) {
            idx[k] = static_cast<int>(rem % nodes_per_axis);
            rem /= nodes_per_axis;
        }
        for (int k = 0; k < d; ++k)
            q[k] = lo[k] + (hi[k] - lo[k]) * idx[k] / (nodes_per_axis - 1);
        if (excl_radius > 0.0 && near_singularity(q)) {
            ++est.excluded_cells;
            continue;
        }
        double v;
        try {
            v = field.value(q);
        } catch (const SingularPointError&) {
            ++est.excluded_cells;
            continue;
        }
        if (v < est.vmin) {
            est.vmin = v;
            best_min = q;
        }
        if (v > est.vmax) {
            est.vmax = v;
            best_max = q;
        }
    }

    // local refinement around the located extremes
    auto refine = [&](Vec center, bool minimize) {
        double span = 0.0;
        for (int k = 0; k < d; ++k)
            span = std::max(span, (hi[k] - lo[k]) / (nodes_per_axis - 1));
        double best = field.value(center);
        for (int level = 0; level < 6; ++level) {
            const int m = 2;  // +-2 nodes per axis around the center
            std::int64_t tot = 1;
            for (int k = 0; k < d; ++k) tot *= (2 * m + 1);
            Vec arg = center;
            for (std::int64_t f = 0; f < tot; ++f) {
                Vec q(d);
                std::int64_t rem = f;
                for (int k = d - 1; k >= 0; --k) {
                    int off = static_cast<int>(rem % (2 * m + 1)) - m;
                    rem /= (2 * m + 1);
                    q[k] = center[k] + off * span / m;
                }
                if (excl_radius > 0.0 && near_singularity(q)) continue;
                double v;
                try {
                    v = field.value(q);
                } catch (const SingularPointError&) {
                    continue;
                }
                if (minimize ? v < best : v > best) {
                    best = v;
                    arg = q;
                }
            }
            center = arg;
            span *= 0.35;
        }
        return best;
    };
    if (std::isfinite(est.vmin)) est.vmin = std::min(est.vmin, refine(best_min, true));
    if (std::isfinite(est.vmax)) est.vmax = std::max(est.vmax, refine(best_max, false));
    return est;
}

}  // namespace randpot
