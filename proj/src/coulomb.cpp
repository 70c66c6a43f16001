#include "randpot/coulomb.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "randpot/errors.hpp"

namespace randpot {

namespace {

using Cx = std::complex<double>;

constexpr double kPi = 3.14159265358979323846264338328;
constexpr double kInf = std::numeric_limits<double>::infinity();

inline Cx to_cx(const Vec& v) { return Cx(v[0], v[1]); }
inline Vec to_vec(Cx z) {
    Vec v(2);
    v[0] = z.real();
    v[1] = z.imag();
    return v;
}
inline double cross2(Cx a, Cx b) { return a.real() * b.imag() - a.imag() * b.real(); }

// Square root continuous along a path: the branch closest to the previous value.
inline Cx nearest_sqrt(Cx value, Cx prev) {
    Cx s = std::sqrt(value);
    return std::norm(s - prev) <= std::norm(s + prev) ? s : -s;
}

}  // namespace

// --- SingularSite ------------------------------------------------------------

SingularSite SingularSite::yukawa_site(Cx position, double c, double mu) {
    SingularSite s;
    s.position = position;
    s.term = make_yukawa_term(2, c, mu);
    return s;
}

SingularSite SingularSite::finite_range_site(Cx position, double c, double lambda, int eta,
                                             bool attractive) {
    SingularSite s;
    s.position = position;
    s.term = make_finite_range_term(2, c, lambda, eta, Vec(), attractive);
    return s;
}

double SingularSite::chart_f(double rho) const {
    if (term.kind == SiteKind::yukawa) return -term.c * std::exp(-term.mu * rho);
    double rmax = 0.5 * kPi / term.lambda;
    if (rho >= rmax) return 0.0;
    double sgn = term.attractive ? 1.0 : -1.0;
    double cl = std::cos(term.lambda * rho);
    return -sgn * term.c * std::pow(cl, term.eta + 1);
}

double SingularSite::chart_f_prime(double rho) const {
    if (term.kind == SiteKind::yukawa) return term.c * term.mu * std::exp(-term.mu * rho);
    double rmax = 0.5 * kPi / term.lambda;
    if (rho >= rmax) return 0.0;
    double sgn = term.attractive ? 1.0 : -1.0;
    double cl = std::cos(term.lambda * rho);
    double sl = std::sin(term.lambda * rho);
    return sgn * term.c * static_cast<double>(term.eta + 1) * term.lambda *
           std::pow(cl, term.eta) * sl;
}

double SingularSite::extent() const {
    return term.kind == SiteKind::yukawa ? 1.0 / term.mu : 0.5 * kPi / term.lambda;
}

double singularity_strength(const SingularSite& site) {
    if (site.term.kind != SiteKind::yukawa && site.term.kind != SiteKind::finite_range_coulomb)
        throw ConfigError("singular site must carry a coulombic term");
    double f0 = site.chart_f(0.0);
    if (!(f0 < 0.0))
        throw ConfigError("singular site is not attractive: f(0) = " + std::to_string(f0));
    return f0;
}

// --- CoulombSystem -----------------------------------------------------------

CoulombSystem::CoulombSystem(std::vector<SingularSite> sites, const PotentialField* background,
                             std::vector<double> switch_radii)
    : sites_(std::move(sites)), background_(background) {
    if (sites_.empty()) throw ConfigError("coulomb system: no singular sites");
    for (const auto& s : sites_) singularity_strength(s);  // rejects non-attractive sites
    if (background_) {
        if (background_->dim() != 2) throw ConfigError("coulomb system: background must be 2D");
        if (background_->has_singularities())
            throw ConfigError("coulomb system: background must be smooth");
    }

    const int m = num_sites();
    double min_pair = kInf;
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) {
            double d = std::abs(sites_[static_cast<std::size_t>(i)].position -
                                sites_[static_cast<std::size_t>(j)].position);
            if (!(d > 0.0)) throw ConfigError("coulomb system: coincident singular sites");
            min_pair = std::min(min_pair, d);
        }

    if (switch_radii.empty()) {
        r_sw_.resize(static_cast<std::size_t>(m));
        for (int j = 0; j < m; ++j) {
            double cap = std::min(1.0, 0.5 * sites_[static_cast<std::size_t>(j)].extent());
            r_sw_[static_cast<std::size_t>(j)] = m >= 2 ? std::min(0.1 * min_pair, cap) : cap;
        }
    } else {
        if (static_cast<int>(switch_radii.size()) != m)
            throw ConfigError("coulomb system: one switch radius per site required");
        r_sw_ = std::move(switch_radii);
    }
    for (int j = 0; j < m; ++j)
        if (!(r_sw_[static_cast<std::size_t>(j)] > 1e-8))
            throw ConfigError("coulomb system: switch radius too small");
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) {
            double d = std::abs(sites_[static_cast<std::size_t>(i)].position -
                                sites_[static_cast<std::size_t>(j)].position);
            if (r_sw_[static_cast<std::size_t>(i)] + r_sw_[static_cast<std::size_t>(j)] > d)
                throw ConfigError("coulomb system: switch disks overlap");
        }

    // Internal point field over the sites; window = site bounding box plus the
    // truncation radius plus a margin, so the faithful box covers the bbox.
    PoissonConfiguration cfg;
    cfg.d = 2;
    double xlo = kInf, xhi = -kInf, ylo = kInf, yhi = -kInf, maxcut = 0.0;
    for (int j = 0; j < m; ++j) {
        const auto& s = sites_[static_cast<std::size_t>(j)];
        xlo = std::min(xlo, s.position.real());
        xhi = std::max(xhi, s.position.real());
        ylo = std::min(ylo, s.position.imag());
        yhi = std::max(yhi, s.position.imag());
        SingleSitePotential w;
        w.terms.push_back(s.term);
        maxcut = std::max(maxcut, w.cutoff_radius(1e-12, 2));
        cfg.palette.push_back(std::move(w));
        MarkedPoint pt;
        pt.x = to_vec(s.position);
        pt.mark = j;
        cfg.points.push_back(std::move(pt));
    }
    double pad = maxcut + 8.0;
    cfg.win_lo = to_vec(Cx(xlo - pad, ylo - pad));
    cfg.win_hi = to_vec(Cx(xhi + pad, yhi + pad));
    site_field_ = PotentialField::points(std::move(cfg));
}

double CoulombSystem::potential(const Vec& q) const {
    double v = site_field_.evaluate(q, Need::value).V;
    if (background_) v += background_->evaluate(q, Need::value).V;
    return v;
}

Vec CoulombSystem::gradient(const Vec& q) const {
    Vec g = site_field_.evaluate(q, Need::gradient).grad;
    if (background_) g += background_->evaluate(q, Need::gradient).grad;
    return g;
}

void CoulombSystem::rest_eval(int j, const Vec& q, double& value, Vec& grad) const {
    // Direct sum over the other sites: never total-minus-active, which loses
    // the gradient to cancellation near the active singularity.
    EvalAccum acc(2);
    const double r2max = site_field_.cutoff_radius() * site_field_.cutoff_radius();
    for (int k = 0; k < num_sites(); ++k) {
        if (k == j) continue;
        Vec rel = q - to_vec(sites_[static_cast<std::size_t>(k)].position);
        if (rel.norm2() <= r2max)
            sites_[static_cast<std::size_t>(k)].term.accumulate(rel, Need::gradient, acc);
    }
    value = acc.V;
    grad = acc.grad;
    if (background_) {
        FieldEval b = background_->evaluate(q, Need::gradient);
        value += b.V;
        grad += b.grad;
    }
}

// --- regularized integration -------------------------------------------------

namespace {

// One velocity-Verlet step in fictitious time for K = |w|^2/8 + U(z):
// kick(h/2) - drift(h) - kick(h/2) with dz/ds = w/4.  dt is the exact
// physical-time measure of the drift, int |z(s)|^2 ds.
struct FictStep {
    Cx z, w;
    Cx u;       // drift velocity w_half / 4
    Cx g1;      // gradient at the new point (reusable)
    double h = 0.0;
    double dt = 0.0;
};

class Run {
public:
    struct Watch {
        double dist = kInf;  // physical closest approach to the watched site
        double miss = 0.0;   // signed perpendicular offset at that point
        double t = 0.0;
        bool in_chart = false;
        Cx z{}, w{};        // chart drift state at the minimum (in_chart)
        double eloc = 0.0;
        Vec q{2}, v{2};     // physical position / velocity at the minimum
    };

    Run(const CoulombSystem& sys, const RegularizedSpec& spec) : sys_(sys), spec_(spec) {
        if (!(spec_.physical_step > 0.0) || !(spec_.chart_tolerance > 0.0) ||
            !(spec_.max_fictitious_step > 0.0))
            throw ConfigError("regularized flow: steps and tolerance must be positive");
        m_ = sys_.num_sites();
        out_.min_site_distance.assign(static_cast<std::size_t>(m_), kInf);
    }

    int watch_site = -1;
    bool stop_after_watch_visit = false;

    void start_physical(const PhaseState& init, double duration);
    void start_collision(int site, double energy, double angle, double duration);
    void start_chart_state(int site, Cx z0, Cx w0, double eloc, double t0, double duration);
    void advance();

    const Watch& watch() const { return watch_; }
    bool watch_closed() const { return watch_closed_; }
    RegularizedResult take() {
        finalize();
        return std::move(out_);
    }

private:
    const CoulombSystem& sys_;
    RegularizedSpec spec_;
    RegularizedResult out_;
    int m_ = 0;

    Vec q_{2}, p_{2};  // physical state, valid when chart_ < 0
    Cx z_{}, w_{};     // chart state, valid when chart_ >= 0
    int chart_ = -1;
    Cx spos_{};
    double eloc_ = 0.0, kref_ = 0.0, h_fict_ = 0.0;

    double t_ = 0.0, t0_ = 0.0, t_end_ = 0.0, e0_ = 0.0;
    bool done_ = false;
    bool watch_closed_ = false;
    std::int64_t work_ = 0, sample_clock_ = 0;

    Cx cover_q_{1.0, 0.0};  // tracked lift, cover_q_^2 = fpoly(q)
    Cx h_rest_{1.0, 0.0};   // continuous sqrt of the off-site factor (chart mode)
    int last_sheet_ = 1;

    Watch watch_;

    Cx fpoly(Cx q) const {
        Cx f(1.0, 0.0);
        for (int k = 0; k < m_; ++k) f *= q - sys_.site(k).position;
        return f;
    }
    Cx gpoly(Cx q, int j) const {
        Cx f(1.0, 0.0);
        for (int k = 0; k < m_; ++k)
            if (k != j) f *= q - sys_.site(k).position;
        return f;
    }
    int sheet_from(Cx q) {
        Cx r = std::sqrt(fpoly(q));
        if (std::norm(r) > 1e-300)
            last_sheet_ = (cover_q_ * std::conj(r)).real() >= 0.0 ? 1 : -1;
        return last_sheet_;
    }

    void note_energy(double h) {
        out_.max_energy_error = std::max(out_.max_energy_error, std::fabs(h - e0_));
    }
    bool thrash_exceeded() const {
        return static_cast<double>(out_.transitions) >
               spec_.transition_rate_limit * ((t_ - t0_) + 1.0);
    }
    int disk_entered() const {
        for (int j = 0; j < m_; ++j) {
            Vec rel = q_ - to_vec(sys_.site(j).position);
            double r = sys_.switch_radius(j);
            if (rel.norm2() < r * r) return j;
        }
        return -1;
    }

    double signed_miss(Cx rel, Cx v) const {
        double vn = std::abs(v);
        return vn > 0.0 ? cross2(v / vn, rel) : std::abs(rel);
    }

    // Physical-time measure of a drift of length s from z0 with velocity u.
    static double drift_time(Cx z0, Cx u, double s) {
        return s * std::norm(z0) + s * s * (std::conj(z0) * u).real() +
               s * s * s / 3.0 * std::norm(u);
    }

    Cx grad_U(Cx z) const {
        double rho = std::norm(z);
        Cx qc = z * z + spos_;
        double vrest;
        Vec grest(2);
        sys_.rest_eval(chart_, to_vec(qc), vrest, grest);
        const auto& site = sys_.site(chart_);
        return 2.0 * z * (site.chart_f_prime(rho) + vrest - eloc_) +
               (2.0 * rho) * std::conj(z) * to_cx(grest);
    }

    double chart_K(Cx z, Cx w) const {
        double rho = std::norm(z);
        Cx qc = z * z + spos_;
        double vrest;
        Vec grest(2);
        sys_.rest_eval(chart_, to_vec(qc), vrest, grest);
        return 0.125 * std::norm(w) + sys_.site(chart_).chart_f(rho) + rho * (vrest - eloc_);
    }

    FictStep fict_step(Cx z0, Cx w0, double h, Cx g0) const {
        FictStep s;
        s.h = h;
        Cx wh = w0 - (0.5 * h) * g0;
        s.u = 0.25 * wh;
        s.z = z0 + h * s.u;
        s.g1 = grad_U(s.z);
        s.w = wh - (0.5 * h) * s.g1;
        s.dt = drift_time(z0, s.u, h);
        return s;
    }

    void record_sample(double energy) {
        if (spec_.record_stride <= 0) return;
        if (sample_clock_++ % spec_.record_stride != 0) return;
        RegularizedSample s;
        s.t = t_;
        s.energy = energy;
        s.chart = chart_;
        if (chart_ < 0) {
            s.q = q_;
            s.p = p_;
            s.sheet = sheet_from(to_cx(q_));
        } else {
            double rho = std::norm(z_);
            Cx qc = z_ * z_ + spos_;
            s.q = to_vec(qc);
            s.p = rho > 0.0 ? to_vec(w_ * z_ / (2.0 * rho)) : Vec(2);
            s.sheet = sheet_from(qc);
        }
        out_.samples.push_back(std::move(s));
    }

    void track_segment_physical(const Vec& q0, const Vec& ph, double hs, double t_seg) {
        double pn2 = ph.norm2();
        for (int k = 0; k < m_; ++k) {
            Vec dvec = q0 - to_vec(sys_.site(k).position);
            double sig = pn2 > 0.0 ? std::clamp(-dot(dvec, ph) / pn2, 0.0, hs) : 0.0;
            Vec c = dvec + sig * ph;
            double dist = c.norm();
            auto& rec = out_.min_site_distance[static_cast<std::size_t>(k)];
            rec = std::min(rec, dist);
            if (k == watch_site && dist < watch_.dist) {
                watch_.dist = dist;
                watch_.t = t_seg + sig;
                watch_.in_chart = false;
                watch_.q = q0 + sig * ph;
                watch_.v = ph;
                watch_.miss = signed_miss(to_cx(c), to_cx(ph));
            }
        }
    }

    void process_chart_segment(Cx z0, Cx u, double h, double t_seg) {
        double un2 = std::norm(u);
        double sig = un2 > 0.0 ? std::clamp(-(std::conj(z0) * u).real() / un2, 0.0, h) : 0.0;
        Cx zmin = z0 + sig * u;
        double dz = std::abs(zmin);
        double dist = dz * dz;  // |q - s| = |z|^2
        auto& rec = out_.min_site_distance[static_cast<std::size_t>(chart_)];
        rec = std::min(rec, dist);
        double t_min = t_seg + drift_time(z0, u, sig);
        if (dz <= spec_.collision_z_eps && sig > 0.0 && sig < h)
            out_.collisions.push_back({t_min, chart_, std::arg(u * u)});
        if (chart_ == watch_site && dist < watch_.dist) {
            watch_.dist = dist;
            watch_.t = t_min;
            watch_.in_chart = true;
            watch_.z = zmin;
            watch_.w = 4.0 * u;
            watch_.eloc = eloc_;
            Cx qc = zmin * zmin + spos_;
            watch_.q = to_vec(qc);
            double rho = std::norm(zmin);
            Cx pc = rho > 0.0 ? watch_.w * zmin / (2.0 * rho) : Cx(0.0, 0.0);
            watch_.v = to_vec(pc);
            watch_.miss = signed_miss(qc - spos_, watch_.w * zmin);
        }
    }

    void enter_chart(int j, double v_total) {
        ++out_.transitions;
        if (thrash_exceeded()) {
            out_.status = FlowStatus::failed_numerics;
            return;
        }
        Cx qc = to_cx(q_);
        Cx rel = qc - sys_.site(j).position;
        if (!(std::norm(rel) > 0.0)) {
            out_.status = FlowStatus::failed_numerics;
            return;
        }
        Cx z = std::sqrt(rel);
        Cx hrest = std::sqrt(gpoly(qc, j));
        if (std::norm(cover_q_ - z * hrest) > std::norm(cover_q_ + z * hrest)) z = -z;
        chart_ = j;
        spos_ = sys_.site(j).position;
        z_ = z;
        h_rest_ = hrest;
        cover_q_ = z_ * h_rest_;
        w_ = 2.0 * std::conj(z_) * to_cx(p_);
        // Re-centred chart energy: K(entry) = 0 up to rounding, so the K
        // defect measures drift rather than a constant offset.
        eloc_ = 0.5 * p_.norm2() + v_total;
        kref_ = chart_K(z_, w_);
        h_fict_ = spec_.max_fictitious_step;
    }

    void exit_chart() {
        ++out_.transitions;
        int closed = chart_;
        double rho = std::norm(z_);
        Cx qc = z_ * z_ + spos_;
        q_ = to_vec(qc);
        p_ = to_vec(w_ * z_ / (2.0 * rho));
        chart_ = -1;
        if (thrash_exceeded()) {
            out_.status = FlowStatus::failed_numerics;
            return;
        }
        note_energy(0.5 * p_.norm2() + sys_.potential(q_));
        if (stop_after_watch_visit && closed == watch_site) {
            watch_closed_ = true;
            done_ = true;
        }
    }

    void physical_phase();
    void chart_phase();
    void after_chart_commit(double err_unused);
    void chart_final_steps();
    void finalize();
};

void Run::start_physical(const PhaseState& init, double duration) {
    if (init.dim() != 2) throw ConfigError("regularized flow: planar states required");
    if (duration < 0.0) throw ConfigError("regularized flow: negative duration");
    q_ = init.q;
    p_ = init.p;
    t0_ = t_ = init.t;
    t_end_ = init.t + duration;
    double v;
    try {
        v = sys_.potential(q_);
    } catch (const SingularPointError&) {
        throw ConfigError("regularized flow: initial state on a singularity");
    }
    e0_ = 0.5 * p_.norm2() + v;
    cover_q_ = std::sqrt(fpoly(to_cx(q_)));
    record_sample(e0_);
    if (duration == 0.0) done_ = true;
    int j = disk_entered();
    if (j >= 0) enter_chart(j, v);
}

void Run::start_collision(int site, double energy, double angle, double duration) {
    if (site < 0 || site >= m_) throw ConfigError("collision launch: site index out of range");
    if (duration < 0.0) throw ConfigError("collision launch: negative duration");
    double f0 = singularity_strength(sys_.site(site));
    chart_ = site;
    spos_ = sys_.site(site).position;
    z_ = Cx(0.0, 0.0);
    double wmag = std::sqrt(-8.0 * f0);
    w_ = wmag * Cx(std::cos(0.5 * angle), std::sin(0.5 * angle));
    eloc_ = energy;
    e0_ = energy;
    t0_ = t_ = 0.0;
    t_end_ = duration;
    kref_ = chart_K(z_, w_);
    h_fict_ = spec_.max_fictitious_step;
    h_rest_ = std::sqrt(gpoly(spos_, site));
    cover_q_ = Cx(0.0, 0.0);
    out_.min_site_distance[static_cast<std::size_t>(site)] = 0.0;
    Cx u = 0.25 * w_;
    out_.collisions.push_back({0.0, site, std::arg(u * u)});
    record_sample(energy);
    if (duration == 0.0) done_ = true;
}

void Run::start_chart_state(int site, Cx z0, Cx w0, double eloc, double t0, double duration) {
    chart_ = site;
    spos_ = sys_.site(site).position;
    z_ = z0;
    w_ = w0;
    eloc_ = eloc;
    e0_ = eloc;
    t0_ = t_ = t0;
    t_end_ = t0 + duration;
    kref_ = chart_K(z_, w_);
    h_fict_ = spec_.max_fictitious_step;
    Cx qc = z0 * z0 + spos_;
    h_rest_ = std::sqrt(gpoly(qc, site));
    cover_q_ = z_ * h_rest_;
    auto& rec = out_.min_site_distance[static_cast<std::size_t>(site)];
    rec = std::min(rec, std::norm(z0));
    if (duration == 0.0) done_ = true;
}

void Run::advance() {
    try {
        while (!done_ && out_.status == FlowStatus::completed) {
            if (work_ >= spec_.max_steps) {
                out_.status = FlowStatus::failed_numerics;
                break;
            }
            if (chart_ < 0)
                physical_phase();
            else
                chart_phase();
        }
    } catch (const SingularPointError&) {
        out_.status = FlowStatus::hit_singularity;
    }
}

void Run::physical_phase() {
    const double h = spec_.physical_step;
    const double rdur = t_end_ - t_;
    if (rdur <= 0.0) {
        done_ = true;
        return;
    }
    const double t_phase = t_;
    const std::int64_t n_full = static_cast<std::int64_t>(std::floor(rdur / h));
    const double remainder = rdur - static_cast<double>(n_full) * h;
    const bool has_remainder = remainder > 1e-12 * h;
    const PotentialField& field = sys_.site_field();
    const PotentialField* bg = sys_.background();
    const FaithfulBox window = bg ? bg->faithful_box() : FaithfulBox{};

    // The update below mirrors the smooth-flow integrator expression by
    // expression so far-field runs agree bitwise with integrate_flow.
    FieldEval ev = field.evaluate(q_, Need::gradient);
    Vec g = ev.grad;
    double v = ev.V;
    if (bg) {
        FieldEval b = bg->evaluate(q_, Need::gradient);
        g += b.grad;
        v += b.V;
    }
    note_energy(0.5 * p_.norm2() + v);

    std::int64_t k = 0;
    for (;;) {
        if (++work_ > spec_.max_steps) {
            out_.status = FlowStatus::failed_numerics;
            return;
        }
        double hs;
        if (k < n_full)
            hs = h;
        else if (k == n_full && has_remainder)
            hs = remainder;
        else {
            done_ = true;
            return;
        }

        Vec ph = p_ - (0.5 * hs) * g;
        track_segment_physical(q_, ph, hs, t_);
        q_ += hs * ph;
        if (!q_.finite() || !ph.finite()) {
            p_ = ph;
            out_.status = FlowStatus::failed_numerics;
            return;
        }
        ev = field.evaluate(q_, Need::gradient);
        g = ev.grad;
        v = ev.V;
        if (bg) {
            FieldEval b = bg->evaluate(q_, Need::gradient);
            g += b.grad;
            v += b.V;
        }
        p_ = ph - (0.5 * hs) * g;
        ++k;
        ++out_.physical_steps;
        t_ = k <= n_full ? t_phase + h * static_cast<double>(k) : t_phase + rdur;

        double energy = 0.5 * p_.norm2() + v;
        note_energy(energy);
        if (!std::isfinite(energy)) {
            out_.status = FlowStatus::failed_numerics;
            return;
        }
        cover_q_ = nearest_sqrt(fpoly(to_cx(q_)), cover_q_);
        record_sample(energy);
        if (q_.norm() >= spec_.escape_radius) {
            out_.status = FlowStatus::escaped;
            return;
        }
        if (spec_.enforce_window && window.bounded && window.margin(q_) <= 0.0) {
            out_.status = FlowStatus::left_window;
            return;
        }
        int j = disk_entered();
        if (j >= 0) {
            enter_chart(j, v);
            return;
        }
    }
}

void Run::chart_phase() {
    for (;;) {
        if (done_ || out_.status != FlowStatus::completed || chart_ < 0) return;
        if (++work_ > spec_.max_steps) {
            out_.status = FlowStatus::failed_numerics;
            return;
        }
        Cx g0 = grad_U(z_);
        FictStep one = fict_step(z_, w_, h_fict_, g0);
        FictStep ha = fict_step(z_, w_, 0.5 * h_fict_, g0);
        FictStep hb = fict_step(ha.z, ha.w, 0.5 * h_fict_, ha.g1);
        double scale = std::max({1.0, std::abs(hb.z), 0.25 * std::abs(hb.w)});
        double err =
            std::max(std::abs(hb.z - one.z), 0.25 * std::abs(hb.w - one.w)) / scale;
        if (!std::isfinite(err)) {
            out_.status = FlowStatus::failed_numerics;
            return;
        }
        if (err > spec_.chart_tolerance) {
            h_fict_ *= std::clamp(0.9 * std::cbrt(spec_.chart_tolerance / err), 0.2, 1.0);
            if (!(h_fict_ > 1e-300)) {
                out_.status = FlowStatus::failed_numerics;
                return;
            }
            continue;
        }
        double dt_total = ha.dt + hb.dt;
        if (dt_total >= t_end_ - t_) {
            chart_final_steps();
            return;
        }
        process_chart_segment(z_, ha.u, ha.h, t_);
        process_chart_segment(ha.z, hb.u, hb.h, t_ + ha.dt);
        z_ = hb.z;
        w_ = hb.w;
        t_ += dt_total;
        out_.chart_steps += 2;
        double grow =
            std::clamp(0.9 * std::cbrt(spec_.chart_tolerance / std::max(err, 1e-300)), 0.2, 5.0);
        h_fict_ = std::min(h_fict_ * grow, spec_.max_fictitious_step);
        after_chart_commit(err);
        if (chart_ < 0 || done_ || out_.status != FlowStatus::completed) return;
    }
}

void Run::after_chart_commit(double /*err*/) {
    double kv = chart_K(z_, w_);
    out_.max_chart_defect = std::max(out_.max_chart_defect, std::fabs(kv - kref_));
    double rho = std::norm(z_);
    Cx qc = z_ * z_ + spos_;
    h_rest_ = nearest_sqrt(gpoly(qc, chart_), h_rest_);
    cover_q_ = z_ * h_rest_;
    for (int k = 0; k < m_; ++k) {
        if (k == chart_) continue;
        double dist = std::abs(qc - sys_.site(k).position);
        auto& rec = out_.min_site_distance[static_cast<std::size_t>(k)];
        rec = std::min(rec, dist);
        if (k == watch_site && dist < watch_.dist && rho > 0.0) {
            watch_.dist = dist;
            watch_.t = t_;
            watch_.in_chart = false;
            watch_.q = to_vec(qc);
            watch_.v = to_vec(w_ * z_ / (2.0 * rho));
            watch_.miss = signed_miss(qc - sys_.site(k).position, w_ * z_);
        }
    }
    record_sample(rho > 1e-12 ? eloc_ + kv / rho : eloc_);
    if (rho >= sys_.switch_radius(chart_)) {
        exit_chart();
        return;
    }
    if (std::abs(qc) >= spec_.escape_radius) {
        out_.status = FlowStatus::escaped;
        return;
    }
    const PotentialField* bg = sys_.background();
    if (spec_.enforce_window && bg) {
        FaithfulBox window = bg->faithful_box();
        if (window.bounded && window.margin(to_vec(qc)) <= 0.0)
            out_.status = FlowStatus::left_window;
    }
}

// Land exactly on t_end inside the chart: single Verlet steps whose drift
// measure is solved for the remaining physical time.
void Run::chart_final_steps() {
    for (;;) {
        double t_rem = t_end_ - t_;
        if (t_rem <= 0.0) {
            t_ = t_end_;
            done_ = true;
            return;
        }
        if (++work_ > spec_.max_steps) {
            out_.status = FlowStatus::failed_numerics;
            return;
        }
        Cx g0 = grad_U(z_);
        auto dt_of = [&](double s) {
            Cx u = 0.25 * (w_ - (0.5 * s) * g0);
            return drift_time(z_, u, s);
        };
        double s = h_fict_;
        if (dt_of(s) >= t_rem) {
            double lo = 0.0, hi = s;
            for (int it = 0; it < 100; ++it) {
                double mid = 0.5 * (lo + hi);
                (dt_of(mid) < t_rem ? lo : hi) = mid;
            }
            s = 0.5 * (lo + hi);
        }
        FictStep st = fict_step(z_, w_, s, g0);
        process_chart_segment(z_, st.u, st.h, t_);
        bool final_step = s < h_fict_ || st.dt >= t_rem;
        z_ = st.z;
        w_ = st.w;
        ++out_.chart_steps;
        double kv = chart_K(z_, w_);
        out_.max_chart_defect = std::max(out_.max_chart_defect, std::fabs(kv - kref_));
        Cx qc = z_ * z_ + spos_;
        h_rest_ = nearest_sqrt(gpoly(qc, chart_), h_rest_);
        cover_q_ = z_ * h_rest_;
        if (final_step) {
            t_ = t_end_;
            done_ = true;
            return;
        }
        t_ += st.dt;
    }
}

void Run::finalize() {
    if (chart_ >= 0) {
        double rho = std::norm(z_);
        Cx qc = z_ * z_ + spos_;
        Cx pc = rho > 0.0 ? w_ * z_ / (2.0 * rho) : Cx(0.0, 0.0);
        out_.state = PhaseState(to_vec(qc), to_vec(pc), t_);
    } else {
        out_.state = PhaseState(q_, p_, t_);
    }
}

}  // namespace

RegularizedResult integrate_regularized(const CoulombSystem& sys, const PhaseState& init,
                                        double duration, const RegularizedSpec& spec) {
    Run run(sys, spec);
    run.start_physical(init, duration);
    run.advance();
    return run.take();
}

RegularizedResult integrate_from_collision(const CoulombSystem& sys, int site, double energy,
                                           double angle, double duration,
                                           const RegularizedSpec& spec) {
    Run run(sys, spec);
    run.start_collision(site, energy, angle, duration);
    run.advance();
    return run.take();
}

double regularized_reversibility_error(const CoulombSystem& sys, const PhaseState& init, double t,
                                       const RegularizedSpec& spec) {
    RegularizedResult fwd = integrate_regularized(sys, init, t, spec);
    if (fwd.status != FlowStatus::completed)
        throw NumericalError("regularized reversibility: forward leg stopped early");
    PhaseState mid(fwd.state.q, -fwd.state.p, fwd.state.t);
    RegularizedResult back = integrate_regularized(sys, mid, t, spec);
    if (back.status != FlowStatus::completed)
        throw NumericalError("regularized reversibility: return leg stopped early");
    double err = 0.0;
    for (int k = 0; k < 2; ++k) {
        err = std::max(err, std::fabs(back.state.q[k] - init.q[k]));
        err = std::max(err, std::fabs(back.state.p[k] + init.p[k]));
    }
    return err;
}

// --- twofold cover -----------------------------------------------------------

BranchFunction::BranchFunction(std::vector<Cx> zs) : zeros(std::move(zs)) {
    for (std::size_t i = 0; i < zeros.size(); ++i)
        for (std::size_t j = i + 1; j < zeros.size(); ++j)
            if (!(std::abs(zeros[i] - zeros[j]) > 0.0))
                throw ConfigError("branch function requires simple zeros");
}

Cx BranchFunction::eval(Cx q) const {
    Cx f(1.0, 0.0);
    for (Cx z : zeros) f *= q - z;
    return f;
}

double BranchFunction::min_distance(Cx q) const {
    double d = kInf;
    for (Cx z : zeros) d = std::min(d, std::abs(q - z));
    return d;
}

BranchFunction branch_function(const CoulombSystem& sys) {
    std::vector<Cx> zs;
    for (int j = 0; j < sys.num_sites(); ++j) zs.push_back(sys.site(j).position);
    return BranchFunction(std::move(zs));
}

SheetTrack lift_to_cover(const BranchFunction& branch, const std::vector<Cx>& path,
                         double margin) {
    if (path.empty()) throw ConfigError("lift_to_cover: empty path");
    if (!(margin > 0.0)) throw ConfigError("lift_to_cover: margin must be positive");
    SheetTrack track;
    track.min_distance = kInf;
    auto guard = [&](Cx pos) {
        double d = branch.min_distance(pos);
        track.min_distance = std::min(track.min_distance, d);
        if (d < margin)
            throw NumericalError("lift_to_cover: path within margin of a branch point");
        return d;
    };
    guard(path[0]);
    Cx lift = std::sqrt(branch.eval(path[0]));
    ++track.evaluations;
    for (std::size_t i = 1; i < path.size(); ++i) {
        Cx a = path[i - 1], b = path[i];
        double len = std::abs(b - a);
        if (len == 0.0) continue;
        Cx dir = (b - a) / len;
        double travelled = 0.0;
        while (travelled < len) {
            Cx pos = a + travelled * dir;
            guard(pos);
            // Advance so the total winding of f moves by at most ~0.4 rad.
            double sum_inv = 0.0;
            for (Cx z : branch.zeros) sum_inv += 1.0 / std::abs(pos - z);
            double adv = len - travelled;
            if (sum_inv > 0.0) adv = std::min(adv, 0.4 / sum_inv);
            travelled += adv;
            Cx nxt = travelled >= len ? b : a + travelled * dir;
            lift = nearest_sqrt(branch.eval(nxt), lift);
            ++track.evaluations;
        }
        guard(b);
    }
    Cx ref = std::sqrt(branch.eval(path.back()));
    double s = (lift * std::conj(ref)).real();
    if (!(std::fabs(s) > 0.25 * std::norm(ref)))
        throw NumericalError("lift_to_cover: ambiguous sheet at the endpoint");
    track.sign = s >= 0.0 ? 1 : -1;
    return track;
}

// --- collision-orbit shooting --------------------------------------------------

namespace {

struct ShotData {
    Run::Watch watch;
    FlowStatus status = FlowStatus::completed;
    double end_time = 0.0;
    bool visit_closed = false;
};

ShotData run_shot(const CoulombSystem& sys, double energy, int site_a, int site_b, double angle,
                  const ShootSpec& spec) {
    Run run(sys, spec.flow);
    run.watch_site = site_b;
    run.stop_after_watch_visit = true;
    run.start_collision(site_a, energy, angle, spec.max_time);
    run.advance();
    ShotData d;
    d.watch = run.watch();
    d.visit_closed = run.watch_closed();
    RegularizedResult res = run.take();
    d.status = res.status;
    d.end_time = res.state.t;
    if (d.status == FlowStatus::failed_numerics || d.status == FlowStatus::hit_singularity)
        throw NumericalError("collision shot failed at angle " + std::to_string(angle));
    return d;
}

}  // namespace

ShootResult shoot_collision_orbit(const CoulombSystem& sys, double energy, int site_a, int site_b,
                                  const ShootSpec& spec) {
    if (site_a < 0 || site_a >= sys.num_sites() || site_b < 0 || site_b >= sys.num_sites() ||
        site_a == site_b)
        throw ConfigError("shoot_collision_orbit: need two distinct site indices");
    if (!(spec.angle_hi > spec.angle_lo))
        throw ConfigError("shoot_collision_orbit: empty angle bracket");

    double best_dist = kInf, best_angle = 0.0, best_time = 0.0;
    auto shot = [&](double ang) {
        ShotData d = run_shot(sys, energy, site_a, site_b, ang, spec);
        if (d.watch.dist < best_dist) {
            best_dist = d.watch.dist;
            best_angle = ang;
            best_time = d.watch.t;
        }
        return d;
    };

    double lo = spec.angle_lo, hi = spec.angle_hi;
    ShotData dlo = shot(lo), dhi = shot(hi);
    if ((dlo.watch.miss < 0.0) == (dhi.watch.miss < 0.0)) {
        // No sign change at the ends: scan the interior for a sub-bracket.
        int n = std::max(spec.scan_points, 3);
        bool found_bracket = false;
        ShotData prev = dlo;
        double prev_ang = lo;
        for (int i = 1; i < n && !found_bracket; ++i) {
            double ang =
                i == n - 1
                    ? hi
                    : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
            ShotData cur = i == n - 1 ? dhi : shot(ang);
            if ((cur.watch.miss < 0.0) != (prev.watch.miss < 0.0)) {
                dlo = prev;
                dhi = cur;
                lo = prev_ang;
                hi = ang;
                found_bracket = true;
            }
            prev = cur;
            prev_ang = ang;
        }
        if (!found_bracket) {
            ShootResult res;
            res.found = false;
            res.launch_angle = best_angle;
            res.flight_time = best_time;
            res.closest_approach = best_dist;
            return res;
        }
    }

    int iters = 0;
    while (hi - lo > spec.angle_tolerance && iters < spec.max_bisections) {
        double mid = 0.5 * (lo + hi);
        ShotData dm = shot(mid);
        if ((dm.watch.miss < 0.0) == (dlo.watch.miss < 0.0)) {
            lo = mid;
            dlo = dm;
        } else {
            hi = mid;
            dhi = dm;
        }
        ++iters;
    }
    double ang = 0.5 * (lo + hi);
    ShotData fin = shot(ang);
    ShootResult res;
    res.found = fin.watch.dist <= spec.success_distance;
    res.launch_angle = ang;
    res.flight_time = fin.watch.t;
    res.closest_approach = fin.watch.dist;
    return res;
}

RetraceResult collision_orbit_retrace(const CoulombSystem& sys, double energy, int site_a,
                                      int site_b, double angle, const ShootSpec& spec) {
    if (site_a < 0 || site_a >= sys.num_sites() || site_b < 0 || site_b >= sys.num_sites() ||
        site_a == site_b)
        throw ConfigError("collision_orbit_retrace: need two distinct site indices");
    ShotData leg1 = run_shot(sys, energy, site_a, site_b, angle, spec);

    RetraceResult out;
    out.outward_miss = leg1.watch.dist;
    if (!(leg1.watch.dist < kInf))
        throw NumericalError("collision_orbit_retrace: outward leg never approached the target");

    // Reflect at the closest approach: momentum flip, the regularized
    // collision continuation, exact under time reversal.
    Run run(sys, spec.flow);
    run.watch_site = site_a;
    run.stop_after_watch_visit = true;
    if (leg1.watch.in_chart) {
        run.start_chart_state(site_b, leg1.watch.z, -leg1.watch.w, leg1.watch.eloc, leg1.watch.t,
                              spec.max_time);
    } else {
        PhaseState flip(leg1.watch.q, -leg1.watch.v, leg1.watch.t);
        run.start_physical(flip, spec.max_time);
    }
    run.advance();
    out.completed = run.watch_closed();
    out.miss_at_a = run.watch().dist;
    RegularizedResult res = run.take();
    out.total_time = res.state.t;
    if (res.status == FlowStatus::failed_numerics || res.status == FlowStatus::hit_singularity)
        throw NumericalError("collision_orbit_retrace: return leg failed");
    return out;
}

}  // namespace randpot
