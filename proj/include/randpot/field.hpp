#pragma once

// Potential field: evaluation of V (and derivatives) for a configuration,
// truncated to sites within a cutoff radius.  Every evaluation carries a
// tail bound for the omitted sites; compact-support palettes give a tail of
// exactly zero.

#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "randpot/configuration.hpp"

namespace randpot {

struct FieldEval {
    double V = 0.0;
    Vec grad;
    Mat hess;
    double lap = 0.0;
    double tail_bound = 0.0;

    explicit FieldEval(int d) : grad(d), hess(d) {}
};

// Axis-aligned region on which the windowed sum faithfully represents the
// infinite-volume field (window box shrunk by the site cutoff radius).
struct FaithfulBox {
    Vec lo, hi;
    bool bounded = false;

    double margin(const Vec& q) const {
        if (!bounded) return std::numeric_limits<double>::infinity();
        double m = std::numeric_limits<double>::infinity();
        for (int k = 0; k < q.dim(); ++k) {
            m = std::min(m, q[k] - lo[k]);
            m = std::min(m, hi[k] - q[k]);
        }
        return m;
    }
};

class PotentialField {
public:
    PotentialField() = default;

    static PotentialField lattice(LatticeConfiguration cfg,
                                  std::optional<double> r_trunc = std::nullopt);
    static PotentialField points(PoissonConfiguration cfg,
                                 std::optional<double> r_trunc = std::nullopt);
    // alpha * base(A q + b): used by the scaling operators
    static PotentialField transformed(std::shared_ptr<const PotentialField> base, double alpha,
                                      const Mat& A, const Vec& b);

    int dim() const { return d_; }
    bool empty_source() const;
    double cutoff_radius() const { return r_trunc_; }
    FaithfulBox faithful_box() const { return faithful_; }
    bool has_singularities() const { return !singular_points_.empty(); }
    const std::vector<Vec>& singular_points() const { return singular_points_; }

    FieldEval evaluate(const Vec& q, Need need = Need::hessian) const;
    double value(const Vec& q) const { return evaluate(q, Need::value).V; }

    const LatticeConfiguration* lattice_source() const { return lat_.get(); }
    const PoissonConfiguration* point_source() const { return poi_.get(); }

private:
    int d_ = 0;
    double r_trunc_ = 0.0;
    double env_at_cutoff_ = 0.0;  // max palette envelope at the cutoff radius
    FaithfulBox faithful_;
    std::vector<Vec> singular_points_;

    std::shared_ptr<const LatticeConfiguration> lat_;
    std::shared_ptr<const PoissonConfiguration> poi_;

    // transform variant
    std::shared_ptr<const PotentialField> base_;
    double alpha_ = 1.0;
    Mat tr_A_;
    Vec tr_b_;

    // uniform bucket grid over the point set (built when it pays off)
    struct Buckets {
        Vec origin;
        double cell = 0.0;
        IndexVec n{};
        std::vector<std::vector<std::int32_t>> bins;
    };
    std::shared_ptr<const Buckets> buckets_;

    void finish_setup(double default_tol, std::optional<double> r_trunc);
};

struct RangeEstimate {
    double vmin = 0.0;
    double vmax = 0.0;
    std::int64_t excluded_cells = 0;  // grid nodes skipped near singularities
};

// Grid scan of V over [lo, hi] with local refinement around extremes.
// Nodes within excl_radius of a singular point are excluded and counted.
RangeEstimate estimate_range(const PotentialField& field, const Vec& lo, const Vec& hi,
                             int nodes_per_axis, double excl_radius = 0.0);

}  // namespace randpot
