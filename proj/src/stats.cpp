#include "randpot/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>

#include "randpot/errors.hpp"
#include "randpot/parallel.hpp"
#include "randpot/special.hpp"
#include "randpot/textio.hpp"

namespace randpot {

namespace {

std::vector<double> uniform_edges(double lo, double hi, int n) {
    std::vector<double> e(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) e[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / n;
    e.front() = lo;
    e.back() = hi;
    return e;
}

// Edges of [-v_max, v_max) built mirror-symmetric bit for bit, so that the
// reflection bin map i -> n-1-i is exact.
std::vector<double> symmetric_edges(double v_max, int n) {
    std::vector<double> e(static_cast<std::size_t>(n) + 1);
    for (int i = 0; 2 * i <= n; ++i) {
        double x = -v_max + 2.0 * v_max * i / n;
        e[static_cast<std::size_t>(i)] = x;
        e[static_cast<std::size_t>(n - i)] = -x;
    }
    if (n % 2 == 0) e[static_cast<std::size_t>(n / 2)] = 0.0;
    return e;
}

// Half-open bin lookup: index i with edges[i] <= x < edges[i+1], else -1.
int locate(const std::vector<double>& edges, double x) {
    if (!(x >= edges.front()) || !(x < edges.back())) return -1;
    auto it = std::upper_bound(edges.begin(), edges.end(), x);
    return static_cast<int>(it - edges.begin()) - 1;
}

}  // namespace

EnergyVelocityHistogram EnergyVelocityHistogram::regular(int dim, double e_lo, double e_hi,
                                                         int e_bins, double v_max, int v_bins) {
    if (dim < 1 || dim > kMaxDim) throw ConfigError("histogram: bad dimension");
    if (e_bins < 1 || v_bins < 1) throw ConfigError("histogram: bin counts must be >= 1");
    if (!(e_lo < e_hi) || !(v_max > 0.0)) throw ConfigError("histogram: empty bin range");
    EnergyVelocityHistogram h;
    h.dim = dim;
    h.energy_edges = uniform_edges(e_lo, e_hi, e_bins);
    h.velocity_edges.assign(static_cast<std::size_t>(dim), symmetric_edges(v_max, v_bins));
    std::size_t bins = static_cast<std::size_t>(e_bins);
    for (int k = 0; k < dim; ++k) bins *= static_cast<std::size_t>(v_bins);
    h.counts.assign(bins, 0);
    h.flagged.assign(bins, 0);
    return h;
}

std::size_t EnergyVelocityHistogram::flat_index(int e_bin, const std::vector<int>& v_bins) const {
    std::size_t idx = static_cast<std::size_t>(e_bin);
    for (int k = 0; k < dim; ++k)
        idx = idx * static_cast<std::size_t>(velocity_bins(k)) +
              static_cast<std::size_t>(v_bins[static_cast<std::size_t>(k)]);
    return idx;
}

bool EnergyVelocityHistogram::add(double energy, const Vec& velocity, bool flag) {
    if (velocity.dim() != dim) throw ConfigError("histogram: velocity dimension mismatch");
    ++total;
    int e_bin = locate(energy_edges, energy);
    std::vector<int> v_bins(static_cast<std::size_t>(dim));
    bool ok = e_bin >= 0;
    for (int k = 0; k < dim && ok; ++k) {
        int b = locate(velocity_edges[static_cast<std::size_t>(k)], velocity[k]);
        v_bins[static_cast<std::size_t>(k)] = b;
        ok = b >= 0;
    }
    if (!ok) {
        ++overflow;
        if (flag) ++overflow_flagged;
        return false;
    }
    std::size_t idx = flat_index(e_bin, v_bins);
    ++counts[idx];
    if (flag) ++flagged[idx];
    return true;
}

void EnergyVelocityHistogram::merge(const EnergyVelocityHistogram& other) {
    if (dim != other.dim || energy_edges != other.energy_edges ||
        velocity_edges != other.velocity_edges)
        throw ConfigError("histogram merge: layouts differ");
    for (std::size_t i = 0; i < counts.size(); ++i) {
        counts[i] += other.counts[i];
        flagged[i] += other.flagged[i];
    }
    overflow += other.overflow;
    overflow_flagged += other.overflow_flagged;
    total += other.total;
    excluded += other.excluded;
    if (box_lo.dim() == 0 && other.box_lo.dim() > 0) {
        box_lo = other.box_lo;
        box_hi = other.box_hi;
        momentum_radius = other.momentum_radius;
        master_seed = other.master_seed;
    }
}

bool EnergyVelocityHistogram::velocity_edges_symmetric(double tol) const {
    for (const auto& edges : velocity_edges) {
        std::size_t n = edges.size();
        for (std::size_t i = 0; i < n; ++i)
            if (std::fabs(edges[i] + edges[n - 1 - i]) > tol) return false;
    }
    return true;
}

void EnergyVelocityHistogram::write_csv(
    std::ostream& os, const std::vector<std::pair<std::string, std::string>>& summary) const {
    os << "# dim=" << fmt_int(dim) << "\n";
    os << "# total=" << fmt_u64(total) << "\n";
    os << "# overflow=" << fmt_u64(overflow) << "\n";
    os << "# excluded=" << fmt_u64(excluded) << "\n";
    os << "# momentum_radius=" << fmt17(momentum_radius) << "\n";
    os << "# master_seed=" << fmt_u64(master_seed) << "\n";
    if (box_lo.dim() == dim && box_hi.dim() == dim) {
        os << "# box_lo=";
        for (int k = 0; k < dim; ++k) os << (k ? "," : "") << fmt17(box_lo[k]);
        os << "\n# box_hi=";
        for (int k = 0; k < dim; ++k) os << (k ? "," : "") << fmt17(box_hi[k]);
        os << "\n";
    }
    for (const auto& kv : summary) os << "# " << kv.first << "=" << kv.second << "\n";

    os << "E_lo,E_hi";
    for (int k = 1; k <= dim; ++k) os << ",v" << fmt_int(k) << "_lo,v" << fmt_int(k) << "_hi";
    os << ",count,flagged_count\n";

    std::vector<int> v(static_cast<std::size_t>(dim), 0);
    for (int e = 0; e < energy_bins(); ++e) {
        std::fill(v.begin(), v.end(), 0);
        for (;;) {
            std::size_t idx = flat_index(e, v);
            os << fmt17(energy_edges[static_cast<std::size_t>(e)]) << ','
               << fmt17(energy_edges[static_cast<std::size_t>(e) + 1]);
            for (int k = 0; k < dim; ++k) {
                const auto& ed = velocity_edges[static_cast<std::size_t>(k)];
                int b = v[static_cast<std::size_t>(k)];
                os << ',' << fmt17(ed[static_cast<std::size_t>(b)]) << ','
                   << fmt17(ed[static_cast<std::size_t>(b) + 1]);
            }
            os << ',' << fmt_u64(counts[idx]) << ',' << fmt_u64(flagged[idx]) << "\n";
            // odometer over the velocity axes, last axis fastest
            int k = dim - 1;
            for (; k >= 0; --k) {
                int& b = v[static_cast<std::size_t>(k)];
                if (++b < velocity_bins(k)) break;
                b = 0;
            }
            if (k < 0) break;
        }
    }
}

InversionTestResult inversion_symmetry_test(const EnergyVelocityHistogram& hist) {
    if (!hist.velocity_edges_symmetric()) throw ConfigError("inversion test: asymmetric bin layout");
    std::uint64_t n_binned = 0;
    for (auto c : hist.counts) n_binned += c;
    if (n_binned == 0) throw NumericalError("inversion test: empty histogram");

    double l1 = 0.0;
    std::vector<int> v(static_cast<std::size_t>(hist.dim), 0);
    std::vector<int> vr(static_cast<std::size_t>(hist.dim), 0);
    for (int e = 0; e < hist.energy_bins(); ++e) {
        std::fill(v.begin(), v.end(), 0);
        for (;;) {
            for (int k = 0; k < hist.dim; ++k)
                vr[static_cast<std::size_t>(k)] =
                    hist.velocity_bins(k) - 1 - v[static_cast<std::size_t>(k)];
            double a = static_cast<double>(hist.counts[hist.flat_index(e, v)]);
            double b = static_cast<double>(hist.counts[hist.flat_index(e, vr)]);
            l1 += std::fabs(a - b);
            int k = hist.dim - 1;
            for (; k >= 0; --k) {
                int& bb = v[static_cast<std::size_t>(k)];
                if (++bb < hist.velocity_bins(k)) break;
                bb = 0;
            }
            if (k < 0) break;
        }
    }
    InversionTestResult r;
    r.tv_distance = 0.5 * l1 / static_cast<double>(n_binned);
    r.threshold = 4.0 / std::sqrt(static_cast<double>(n_binned));
    r.pass = r.tv_distance <= r.threshold;
    return r;
}

void EnsembleSpec::validate() const {
    if (num_configurations < 1 || trajectories_per_configuration < 1)
        throw ConfigError("ensemble: counts must be >= 1");
    if (!(duration > 0.0)) throw ConfigError("ensemble: duration must be positive");
    if (!(flow.step > 0.0)) throw ConfigError("ensemble: step must be positive");
    if (!(box_halfwidth > 0.0)) throw ConfigError("ensemble: box halfwidth must be positive");
    if (!(gap_tolerance >= 0.0)) throw ConfigError("ensemble: gap tolerance must be >= 0");
    if (workers < 1) throw ConfigError("ensemble: workers must be >= 1");
}

namespace {

struct SampleRecord {
    double energy = 0.0;
    Vec v;
    bool flagged = false;
    std::uint64_t draws = 0;  // momentum proposals consumed
};

}  // namespace

EnergyVelocityHistogram energy_velocity_distribution(int dim, const FieldSampler& sampler,
                                                     double v_min_est, double v_max_est,
                                                     const EnsembleSpec& spec,
                                                     EnergyVelocityHistogram layout,
                                                     std::uint64_t master_seed) {
    spec.validate();
    if (layout.dim != dim) throw ConfigError("ensemble: histogram layout dimension mismatch");
    if (!(spec.e_max > v_max_est))
        throw ConfigError("ensemble: e_max must exceed the estimated field maximum");
    if (!(v_min_est <= v_max_est)) throw ConfigError("ensemble: inverted field range estimate");

    const double radius = std::sqrt(2.0 * (spec.e_max - v_min_est));
    Vec lo(dim), hi(dim);
    for (int k = 0; k < dim; ++k) {
        lo[k] = -spec.box_halfwidth;
        hi[k] = spec.box_halfwidth;
    }
    const RngStream master(master_seed);
    const std::size_t n_tasks = static_cast<std::size_t>(spec.num_configurations) *
                                static_cast<std::size_t>(spec.trajectories_per_configuration);
    const std::uint64_t max_draws = 10000;

    auto task = [&](std::size_t i) -> SampleRecord {
        std::size_t c = i / static_cast<std::size_t>(spec.trajectories_per_configuration);
        RngStream field_stream = master.derive("field", c);
        PotentialField field = sampler(field_stream);
        if (field.dim() != dim) throw ConfigError("ensemble: sampled field dimension mismatch");

        RngStream ts = master.derive("sample", i);
        Vec q = ts.uniform_in_box(lo, hi);
        double V = field.value(q);
        SampleRecord rec;
        Vec p;
        for (;;) {
            ++rec.draws;
            p = ts.uniform_in_ball(dim, radius);
            rec.energy = V + 0.5 * p.norm2();
            if (rec.energy <= spec.e_max) break;
            if (rec.draws >= max_draws)
                throw NumericalError(
                    "ensemble: momentum rejection rate exceeds 99%; e_max inconsistent with the "
                    "field range");
        }
        VelocityEstimate est = asymptotic_velocity(field, PhaseState(q, p, 0.0), spec.duration,
                                                   spec.flow);
        rec.v = est.v_hat;
        rec.flagged = est.status != FlowStatus::completed || est.gap > spec.gap_tolerance;
        return rec;
    };

    std::vector<SampleRecord> records =
        parallel_map<SampleRecord>(spec.workers, n_tasks, task);

    EnergyVelocityHistogram hist = std::move(layout);
    hist.box_lo = lo;
    hist.box_hi = hi;
    hist.momentum_radius = radius;
    hist.master_seed = master_seed;

    std::uint64_t total_draws = 0;
    for (const SampleRecord& rec : records) {
        total_draws += rec.draws;
        if (rec.flagged && spec.strict_exclude_flagged) {
            ++hist.excluded;
            continue;
        }
        hist.add(rec.energy, rec.v, rec.flagged);
    }
    if (static_cast<double>(n_tasks) < 0.01 * static_cast<double>(total_draws))
        throw NumericalError("ensemble: momentum rejection rate exceeds 99%");
    return hist;
}

MonteCarloEstimate liouville_mass_estimate(const PotentialField& field, double energy,
                                           const Vec& lo, const Vec& hi,
                                           std::uint64_t n_samples, RngStream rng) {
    const int d = field.dim();
    if (lo.dim() != d || hi.dim() != d) throw ConfigError("liouville: domain dimension mismatch");
    if (n_samples < 2) throw ConfigError("liouville: need at least 2 samples");
    double vol = 1.0;
    for (int k = 0; k < d; ++k) {
        if (!(hi[k] > lo[k])) throw ConfigError("liouville: empty domain");
        vol *= hi[k] - lo[k];
    }
    const double tau_d = unit_ball_volume(d);

    // Welford accumulation of g(q) = tau_d (2 (E - V(q))_+)^(d/2).
    double mean = 0.0, m2 = 0.0;
    for (std::uint64_t i = 0; i < n_samples; ++i) {
        Vec q = rng.uniform_in_box(lo, hi);
        double s = 2.0 * (energy - field.value(q));
        double g = s > 0.0 ? tau_d * std::pow(s, 0.5 * d) : 0.0;
        double n1 = static_cast<double>(i + 1);
        double delta = g - mean;
        mean += delta / n1;
        m2 += delta * (g - mean);
    }
    MonteCarloEstimate r;
    r.samples = n_samples;
    r.value = vol * mean;
    double nn = static_cast<double>(n_samples);
    r.std_error = vol * std::sqrt(std::max(0.0, m2) / (nn * (nn - 1.0)));
    return r;
}

MonteCarloEstimate liouville_mass_phase_space(const PotentialField& field, double energy,
                                              const Vec& lo, const Vec& hi, double p_radius,
                                              std::uint64_t n_samples, RngStream rng) {
    const int d = field.dim();
    if (lo.dim() != d || hi.dim() != d) throw ConfigError("liouville: domain dimension mismatch");
    if (!(p_radius > 0.0)) throw ConfigError("liouville: momentum radius must be positive");
    if (n_samples < 2) throw ConfigError("liouville: need at least 2 samples");
    double vol = unit_ball_volume(d) * std::pow(p_radius, d);
    for (int k = 0; k < d; ++k) {
        if (!(hi[k] > lo[k])) throw ConfigError("liouville: empty domain");
        vol *= hi[k] - lo[k];
    }

    std::uint64_t hits = 0;
    for (std::uint64_t i = 0; i < n_samples; ++i) {
        Vec q = rng.uniform_in_box(lo, hi);
        Vec p = rng.uniform_in_ball(d, p_radius);
        if (field.value(q) + 0.5 * p.norm2() <= energy) ++hits;
    }
    double phat = static_cast<double>(hits) / static_cast<double>(n_samples);
    MonteCarloEstimate r;
    r.samples = n_samples;
    r.value = vol * phat;
    r.std_error = vol * std::sqrt(phat * (1.0 - phat) / static_cast<double>(n_samples));
    return r;
}

RecurrenceResult recurrence_rate(const std::vector<FlowSample>& traj, const Vec& cell_lo,
                                 const Vec& cell_hi, double min_gap, const Vec& modulus) {
    const int d = cell_lo.dim();
    if (cell_hi.dim() != d) throw ConfigError("recurrence: cell dimension mismatch");
    if (modulus.dim() != 0 && modulus.dim() != d)
        throw ConfigError("recurrence: modulus dimension mismatch");
    if (!(min_gap >= 0.0)) throw ConfigError("recurrence: min gap must be >= 0");

    auto inside = [&](const Vec& q) {
        for (int k = 0; k < d; ++k) {
            double w = q[k];
            if (modulus.dim() == d && modulus[k] > 0.0)
                w -= std::floor(w / modulus[k]) * modulus[k];
            if (!(w >= cell_lo[k] && w < cell_hi[k])) return false;
        }
        return true;
    };

    RecurrenceResult r;
    bool prev = false;
    double last_kept = -std::numeric_limits<double>::infinity();
    for (const FlowSample& s : traj) {
        bool in = inside(s.q);
        if (in && !prev && s.t - last_kept >= min_gap) {
            ++r.count;
            r.times.push_back(s.t);
            last_kept = s.t;
        }
        prev = in;
    }
    return r;
}

GofResult poisson_counts_gof(const std::vector<std::uint64_t>& draws, double lambda,
                             double min_expected) {
    if (draws.empty()) throw ConfigError("gof: no draws");
    if (!(lambda > 0.0)) throw ConfigError("gof: lambda must be positive");
    if (!(min_expected > 0.0)) throw ConfigError("gof: min expected must be positive");
    const double n = static_cast<double>(draws.size());

    // Pool consecutive count values into cells with expected mass >=
    // min_expected; the final cell absorbs the open tail.
    std::vector<double> cell_prob;
    std::vector<std::uint64_t> cell_hi;  // inclusive upper count; last cell unbounded
    double p = std::exp(-lambda);
    double cum = 0.0, acc = 0.0;
    std::uint64_t k = 0;
    for (;;) {
        acc += p;
        cum += p;
        double tail = 1.0 - cum;
        if (tail * n < min_expected) {
            cell_prob.push_back(acc + tail);
            cell_hi.push_back(std::numeric_limits<std::uint64_t>::max());
            break;
        }
        if (acc * n >= min_expected) {
            cell_prob.push_back(acc);
            cell_hi.push_back(k);
            acc = 0.0;
        }
        ++k;
        p *= lambda / static_cast<double>(k);
        if (k > 1000000) throw NumericalError("gof: lambda too large for cell construction");
    }
    if (cell_prob.size() < 2)
        throw ConfigError("gof: too few draws to form at least two cells");

    std::vector<std::uint64_t> observed(cell_prob.size(), 0);
    for (std::uint64_t v : draws) {
        std::size_t c = 0;
        while (v > cell_hi[c]) ++c;
        ++observed[c];
    }

    GofResult r;
    r.pooled_bins = static_cast<int>(cell_prob.size());
    for (std::size_t i = 0; i < cell_prob.size(); ++i) {
        double expect = n * cell_prob[i];
        double diff = static_cast<double>(observed[i]) - expect;
        r.chi2 += diff * diff / expect;
    }
    r.dof = r.pooled_bins - 1;
    r.p_value = chi2_sf(r.chi2, r.dof);
    return r;
}

}  // namespace randpot
