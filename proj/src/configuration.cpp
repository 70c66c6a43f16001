#include "randpot/configuration.hpp"

#include <cmath>

namespace randpot {

LatticeBasis::LatticeBasis(int dim, const Mat& b) : d(dim), basis(b) {
    if (dim < 1 || dim > kMaxDim) throw ConfigError("LatticeBasis: dimension out of range");
    if (b.dim() != dim) throw ConfigError("LatticeBasis: matrix dimension mismatch");
    double det = b.det();
    if (!(det > 0.0)) throw ConfigError("LatticeBasis: basis must have positive determinant");
    inv_basis = b.inverse();
    cell_volume = det;
}

LatticeBasis LatticeBasis::cubic(int dim, double spacing) {
    if (!(spacing > 0.0)) throw ConfigError("LatticeBasis: spacing must be positive");
    Mat b = Mat::identity(dim);
    b *= spacing;
    return LatticeBasis(dim, b);
}

IndexBox IndexBox::centered(int d, int halfwidth) {
    if (halfwidth < 0) throw ConfigError("IndexBox: negative halfwidth");
    IndexBox b;
    b.d = d;
    for (int k = 0; k < d; ++k) {
        b.lo[k] = -halfwidth;
        b.hi[k] = halfwidth;
    }
    return b;
}

void LatticeConfiguration::validate() const {
    if (window.d != basis.d) throw ConfigError("lattice configuration: window dimension mismatch");
    if (static_cast<std::int64_t>(marks.size()) != window.count())
        throw ConfigError("lattice configuration: mark storage size mismatch");
    if (palette.empty()) throw ConfigError("lattice configuration: empty palette");
    for (std::uint8_t m : marks)
        if (m >= palette.size())
            throw ConfigError("lattice configuration: mark outside palette");
}

LatticeConfiguration sample_lattice_configuration(RngStream rng, const LatticeBasis& basis,
                                                  const IndexBox& window,
                                                  const std::vector<double>& weights,
                                                  std::vector<SingleSitePotential> palette) {
    if (weights.size() != palette.size())
        throw ConfigError("sample_lattice_configuration: |weights| != |palette|");
    if (palette.size() > 256)
        throw ConfigError("sample_lattice_configuration: palette too large");
    double wsum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw ConfigError("sample_lattice_configuration: negative weight");
        wsum += w;
    }
    if (!(wsum > 0.0)) throw ConfigError("sample_lattice_configuration: zero weight mass");

    LatticeConfiguration cfg;
    cfg.basis = basis;
    cfg.window = window;
    cfg.palette = std::move(palette);
    std::int64_t n = window.count();
    cfg.marks.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        cfg.marks[static_cast<std::size_t>(i)] =
            static_cast<std::uint8_t>(rng.categorical(weights.data(), static_cast<int>(weights.size())));
    cfg.validate();
    return cfg;
}

LatticeConfiguration shift_configuration(const LatticeConfiguration& cfg, const IndexVec& ell) {
    LatticeConfiguration out;
    out.basis = cfg.basis;
    out.palette = cfg.palette;
    out.window.d = cfg.window.d;
    for (int k = 0; k < cfg.window.d; ++k) {
        out.window.lo[k] = cfg.window.lo[k] - ell[k];
        out.window.hi[k] = cfg.window.hi[k] - ell[k];
    }
    out.marks.resize(cfg.marks.size());
    // marks'(i) = marks(i + ell), iterated in the shifted window's flat order
    IndexVec idx = out.window.lo;
    const int d = cfg.window.d;
    for (std::size_t flat = 0; flat < out.marks.size(); ++flat) {
        IndexVec src;
        for (int k = 0; k < d; ++k) src[k] = idx[k] + ell[k];
        out.marks[flat] = cfg.mark_at(src);
        // odometer increment (last axis fastest, matching flat_index)
        for (int k = d - 1; k >= 0; --k) {
            if (++idx[k] <= out.window.hi[k]) break;
            idx[k] = out.window.lo[k];
        }
    }
    return out;
}

void PoissonConfiguration::validate(bool require_compact) const {
    if (d < 1 || d > kMaxDim) throw ConfigError("point configuration: dimension out of range");
    if (win_lo.dim() != d || win_hi.dim() != d)
        throw ConfigError("point configuration: window dimension mismatch");
    for (int k = 0; k < d; ++k)
        if (!(win_lo[k] <= win_hi[k]))
            throw ConfigError("point configuration: empty window box");
    if (palette.empty() && !points.empty())
        throw ConfigError("point configuration: empty palette");
    for (const auto& pt : points) {
        if (pt.x.dim() != d) throw ConfigError("point configuration: point dimension mismatch");
        if (pt.mark < 0 || pt.mark >= static_cast<int>(palette.size()))
            throw ConfigError("point configuration: mark outside palette");
    }
    if (require_compact)
        for (const auto& site : palette)
            for (const auto& t : site.terms)
                if (!t.compact_support())
                    throw ConfigError("poisson palette requires compactly supported sites");
}

PoissonConfiguration sample_poisson_configuration(RngStream rng, const Vec& lo, const Vec& hi,
                                                  const std::vector<double>& intensities,
                                                  std::vector<SingleSitePotential> palette) {
    if (intensities.size() != palette.size())
        throw ConfigError("sample_poisson_configuration: |intensities| != |palette|");
    PoissonConfiguration cfg;
    cfg.d = lo.dim();
    cfg.win_lo = lo;
    cfg.win_hi = hi;
    cfg.palette = std::move(palette);
    cfg.intensities = intensities;
    cfg.validate(/*require_compact=*/true);

    double volume = 1.0;
    for (int k = 0; k < cfg.d; ++k) volume *= (hi[k] - lo[k]);
    for (std::size_t j = 0; j < intensities.size(); ++j) {
        double rho = intensities[j];
        if (rho < 0.0) throw ConfigError("sample_poisson_configuration: negative intensity");
        std::uint64_t n = rng.poisson(rho * volume);
        for (std::uint64_t i = 0; i < n; ++i) {
            MarkedPoint pt;
            pt.x = rng.uniform_in_box(lo, hi);
            pt.mark = static_cast<int>(j);
            cfg.points.push_back(std::move(pt));
        }
    }
    return cfg;
}

PoissonConfiguration shift_configuration(const PoissonConfiguration& cfg, const Vec& ell) {
    PoissonConfiguration out = cfg;
    out.win_lo = cfg.win_lo - ell;
    out.win_hi = cfg.win_hi - ell;
    for (auto& pt : out.points) pt.x -= ell;
    return out;
}

}  // namespace randpot
