#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifndef lapack_complex_double
#define lapack_complex_float std::complex<float>
#define lapack_complex_double std::complex<double>
#endif
#include <cblas.h>
#include <lapacke.h>
#include <nlohmann/json.hpp>

#include "conic/fit.hpp"
#include "conic/geometry.hpp"
#include "conic/harness/parallel.hpp"
#include "conic/harness/rng.hpp"
#include "conic/quadrature.hpp"

namespace conic {

using cplx = std::complex<double>;

// ---------------------------------------------------------------------------
// Radial mode operators

// Liouville potential of the mode ell: -d^2/dr^2 + V acts on v = f^{(n-1)/2} u.
inline double liouville_potential(const WarpedMetric& m, int ell, double r)
{
    const double f = m.f(r), f1 = m.f1(r), f2 = m.f2(r);
    const double n = m.n;
    return ell * (ell + n - 2) / (f * f) + 0.5 * (n - 1) * f2 / f + 0.25 * (n - 1) * (n - 3) * (f1 / f) * (f1 / f);
}

struct RadialModeOperator {
    WarpedMetric metric;
    int ell = 0;
    double R_max = 0;
    double dr = 0;
    std::vector<double> r;      // interior nodes i*dr, i = 1..N
    std::vector<double> diag;   // 2/dr^2 + V(r_i)
    double offdiag = 0;         // -1/dr^2
    std::vector<double> lambda; // ascending
    std::vector<double> Z;      // column-major, Z[i + k N] = component i of eigenvector k (euclidean orthonormal)

    std::size_t size() const { return r.size(); }
    std::size_t modes() const { return lambda.size(); }
    const double* vec(std::size_t k) const { return Z.data() + k * size(); }
};

inline std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline nlohmann::json metric_json(const WarpedMetric& m)
{
    return {{"family", family_name(m.profile.family)}, {"n", m.n}, {"amplitude", m.profile.amplitude},
            {"nu", m.profile.nu}, {"r_flat", m.r_flat}};
}

inline std::uint64_t metric_hash(const WarpedMetric& m) { return fnv1a(metric_json(m).dump()); }

namespace detail {

inline std::size_t grid_size(double R_max, double dr)
{
    if (!(dr > 0) || !(R_max > dr)) throw std::invalid_argument("build_mode_operator: need 0 < dr < R_max");
    const double ratio = R_max / dr;
    const long M = std::lround(ratio);
    if (std::abs(ratio - M) > 1e-9 * ratio) throw std::invalid_argument("build_mode_operator: R_max must be a multiple of dr");
    if (M > 20000) throw std::invalid_argument("build_mode_operator: R_max/dr exceeds 20000");
    if (M < 3) throw std::invalid_argument("build_mode_operator: fewer than two interior nodes");
    return static_cast<std::size_t>(M - 1);
}

inline void assemble(RadialModeOperator& op)
{
    const std::size_t N = grid_size(op.R_max, op.dr);
    if (op.ell < 0) throw std::invalid_argument("build_mode_operator: ell must be >= 0");
    op.r.resize(N);
    op.diag.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
        op.r[i] = (i + 1) * op.dr;
        const double V = liouville_potential(op.metric, op.ell, op.r[i]);
        if (!std::isfinite(V)) throw std::overflow_error("build_mode_operator: potential not finite at r = " + std::to_string(op.r[i]));
        op.diag[i] = 2 / (op.dr * op.dr) + V;
    }
    op.offdiag = -1 / (op.dr * op.dr);
}

// Eigenpairs of the tridiagonal matrix; count = 0 means the full spectrum.
inline void eigensolve(const std::vector<double>& diag, double off, std::size_t count, bool vectors,
                       std::vector<double>& lambda, std::vector<double>& Z)
{
    const lapack_int N = static_cast<lapack_int>(diag.size());
    std::vector<double> d = diag, e(diag.size(), off);
    const lapack_int want = count == 0 ? N : static_cast<lapack_int>(std::min<std::size_t>(count, diag.size()));
    lambda.assign(N, 0.0);
    if (vectors) Z.assign(static_cast<std::size_t>(N) * want, 0.0);
    std::vector<lapack_int> isuppz(2 * static_cast<std::size_t>(N));
    lapack_int m = 0;
    const char range = count == 0 ? 'A' : 'I';
    const lapack_int info = LAPACKE_dstevr(LAPACK_COL_MAJOR, vectors ? 'V' : 'N', range, N, d.data(), e.data(), 0, 0, 1,
                                           want, 0.0, &m, lambda.data(), vectors ? Z.data() : nullptr, N, isuppz.data());
    if (info != 0) throw std::runtime_error("dstevr failed with info = " + std::to_string(info));
    lambda.resize(m);
    if (vectors) {
        // deterministic sign: first non-negligible component positive
        for (lapack_int k = 0; k < m; ++k) {
            double* z = Z.data() + static_cast<std::size_t>(k) * N;
            double zmax = 0;
            for (lapack_int i = 0; i < N; ++i) zmax = std::max(zmax, std::abs(z[i]));
            for (lapack_int i = 0; i < N; ++i)
                if (std::abs(z[i]) > 1e-6 * zmax) {
                    if (z[i] < 0)
                        for (lapack_int j = 0; j < N; ++j) z[j] = -z[j];
                    break;
                }
        }
    }
}

} // namespace detail

inline RadialModeOperator build_mode_operator(const WarpedMetric& metric, int ell, double R_max, double dr)
{
    RadialModeOperator op;
    op.metric = metric;
    op.ell = ell;
    op.R_max = R_max;
    op.dr = dr;
    detail::assemble(op);
    detail::eigensolve(op.diag, op.offdiag, 0, true, op.lambda, op.Z);
    return op;
}

// Lowest `count` eigenvalues only.
inline std::vector<double> mode_eigenvalues(const WarpedMetric& metric, int ell, double R_max, double dr, std::size_t count)
{
    RadialModeOperator op;
    op.metric = metric;
    op.ell = ell;
    op.R_max = R_max;
    op.dr = dr;
    detail::assemble(op);
    std::vector<double> lam, Z;
    detail::eigensolve(op.diag, op.offdiag, count, false, lam, Z);
    return lam;
}

// max |<v_i, v_j> - delta_ij|
inline double orthonormality_defect(const RadialModeOperator& op)
{
    const std::size_t N = op.size(), M = op.modes();
    std::vector<double> G(M * M);
    cblas_dgemm(CblasColMajor, CblasTrans, CblasNoTrans, M, M, N, 1.0, op.Z.data(), N, op.Z.data(), N, 0.0, G.data(), M);
    double worst = 0;
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < M; ++j) worst = std::max(worst, std::abs(G[i + j * M] - (i == j ? 1.0 : 0.0)));
    return worst;
}

// max |A z_k - lambda_k z_k| over eigenpairs
inline double eigen_residual(const RadialModeOperator& op)
{
    const std::size_t N = op.size();
    double worst = 0;
    for (std::size_t k = 0; k < op.modes(); ++k) {
        const double* z = op.vec(k);
        for (std::size_t i = 0; i < N; ++i) {
            double a = op.diag[i] * z[i];
            if (i > 0) a += op.offdiag * z[i - 1];
            if (i + 1 < N) a += op.offdiag * z[i + 1];
            worst = std::max(worst, std::abs(a - op.lambda[k] * z[i]));
        }
    }
    return worst;
}

// Tridiagonal product A v (nodal values).
inline std::vector<cplx> apply_operator(const RadialModeOperator& op, const std::vector<cplx>& v)
{
    const std::size_t N = op.size();
    std::vector<cplx> out(N);
    for (std::size_t i = 0; i < N; ++i) {
        cplx a = op.diag[i] * v[i];
        if (i > 0) a += op.offdiag * v[i - 1];
        if (i + 1 < N) a += op.offdiag * v[i + 1];
        out[i] = a;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Disk cache: <dir>/<key>.bin holds a length-prefixed JSON header, then lambda and Z
// as little-endian IEEE doubles.

inline std::string operator_cache_key(const WarpedMetric& m, int ell, double R_max, double dr)
{
    std::ostringstream s;
    s << std::hex << metric_hash(m) << std::dec << "_l" << ell << "_R" << R_max << "_dr" << dr;
    return s.str();
}

namespace detail {

inline bool little_endian()
{
    const std::uint16_t x = 1;
    unsigned char c;
    std::memcpy(&c, &x, 1);
    return c == 1;
}

inline void write_doubles(std::ostream& os, const std::vector<double>& v)
{
    if (!little_endian()) throw std::runtime_error("operator cache: big-endian hosts are not supported");
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void read_doubles(std::istream& is, std::vector<double>& v, std::size_t n)
{
    if (!little_endian()) throw std::runtime_error("operator cache: big-endian hosts are not supported");
    v.resize(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw std::runtime_error("operator cache: truncated payload");
}

} // namespace detail

inline void save_operator(const RadialModeOperator& op, const std::filesystem::path& file)
{
    nlohmann::json h{{"format", "conic-mode-operator"},
                     {"version", 1},
                     {"metric", metric_json(op.metric)},
                     {"metric_hash", metric_hash(op.metric)},
                     {"ell", op.ell},
                     {"R_max", op.R_max},
                     {"dr", op.dr},
                     {"N", op.size()},
                     {"modes", op.modes()},
                     {"byte_order", "little"},
                     {"layout", "lambda[modes], Z column-major N x modes"}};
    const std::string hs = h.dump();
    std::filesystem::create_directories(file.parent_path());
    const auto tmp = file.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("operator cache: cannot write " + tmp);
        const std::uint64_t len = hs.size();
        os.write(reinterpret_cast<const char*>(&len), sizeof(len));
        os.write(hs.data(), static_cast<std::streamsize>(len));
        detail::write_doubles(os, op.lambda);
        detail::write_doubles(os, op.Z);
    }
    std::filesystem::rename(tmp, file);
}

inline RadialModeOperator load_operator(const std::filesystem::path& file)
{
    std::ifstream is(file, std::ios::binary);
    if (!is) throw std::runtime_error("operator cache: cannot open " + file.string());
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!is || len > (1u << 20)) throw std::runtime_error("operator cache: bad header length");
    std::string hs(len, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(len));
    const auto h = nlohmann::json::parse(hs);
    if (h.at("format") != "conic-mode-operator" || h.at("version") != 1)
        throw std::runtime_error("operator cache: unknown format");
    const auto& mj = h.at("metric");
    RadialModeOperator op;
    op.metric = make_warped(parse_family(mj.at("family")), mj.at("n"), mj.at("amplitude"), mj.at("nu"), mj.at("r_flat"));
    if (metric_hash(op.metric) != h.at("metric_hash").get<std::uint64_t>())
        throw std::runtime_error("operator cache: metric hash mismatch");
    op.ell = h.at("ell");
    op.R_max = h.at("R_max");
    op.dr = h.at("dr");
    detail::assemble(op);
    const std::size_t N = h.at("N"), M = h.at("modes");
    if (N != op.size()) throw std::runtime_error("operator cache: grid size mismatch");
    detail::read_doubles(is, op.lambda, M);
    detail::read_doubles(is, op.Z, N * M);
    return op;
}

// Build, or load from cache_dir when a matching file exists (empty dir disables caching).
inline RadialModeOperator cached_mode_operator(const WarpedMetric& metric, int ell, double R_max, double dr,
                                               const std::string& cache_dir)
{
    if (cache_dir.empty()) return build_mode_operator(metric, ell, R_max, dr);
    const auto file = std::filesystem::path(cache_dir) / (operator_cache_key(metric, ell, R_max, dr) + ".bin");
    if (std::filesystem::exists(file)) {
        try {
            auto op = load_operator(file);
            if (metric_hash(op.metric) == metric_hash(metric) && op.ell == ell && op.R_max == R_max && op.dr == dr) return op;
        } catch (const std::exception&) {
            // stale or corrupt: rebuild below
        }
    }
    auto op = build_mode_operator(metric, ell, R_max, dr);
    save_operator(op, file);
    return op;
}

// ---------------------------------------------------------------------------
// Mode basis and axisymmetric states

struct ModeBasis {
    WarpedMetric metric;
    double R_max = 0;
    double dr = 0;
    std::vector<RadialModeOperator> ops; // ell = 0..ell_max

    int ell_max() const { return static_cast<int>(ops.size()) - 1; }
    const std::vector<double>& r() const { return ops.front().r; }
    std::size_t size() const { return ops.front().size(); }
};

inline std::shared_ptr<const ModeBasis> build_mode_basis(const WarpedMetric& metric, int ell_max, double R_max, double dr,
                                                         const std::string& cache_dir = "")
{
    if (ell_max < 0) throw std::invalid_argument("build_mode_basis: ell_max must be >= 0");
    auto b = std::make_shared<ModeBasis>();
    b->metric = metric;
    b->R_max = R_max;
    b->dr = dr;
    b->ops.resize(ell_max + 1);
    parallel_for(ell_max + 1, [&](std::size_t l) {
        b->ops[l] = cached_mode_operator(metric, static_cast<int>(l), R_max, dr, cache_dir);
    });
    return b;
}

struct FieldState {
    double t = 0;
    std::shared_ptr<const ModeBasis> basis;
    std::vector<std::vector<cplx>> coeffs; // [ell][node], Liouville gauge

    int n() const { return basis->metric.n; }
    int ell_max() const { return static_cast<int>(coeffs.size()) - 1; }
};

inline FieldState zero_state(std::shared_ptr<const ModeBasis> b)
{
    FieldState s;
    s.basis = std::move(b);
    s.coeffs.assign(s.basis->ops.size(), std::vector<cplx>(s.basis->size(), cplx{}));
    return s;
}

// State u(r, theta) = u_ell(r) Y_ell(theta) with Y_ell normalized on the sphere (gauge applied here).
inline FieldState state_from_profile(std::shared_ptr<const ModeBasis> b, int ell, const std::function<cplx(double)>& u)
{
    FieldState s = zero_state(std::move(b));
    if (ell < 0 || ell > s.ell_max()) throw std::out_of_range("state_from_profile: ell outside the basis");
    const auto& m = s.basis->metric;
    const auto& r = s.basis->r();
    for (std::size_t i = 0; i < r.size(); ++i) s.coeffs[ell][i] = u(r[i]) * std::pow(m.f(r[i]), 0.5 * (m.n - 1));
    return s;
}

// Area of the unit sphere S^{n-1}.
inline double sphere_area(int n) { return 2 * std::pow(std::numbers::pi, 0.5 * n) / std::tgamma(0.5 * n); }

// Purely radial physical function U(r): the ell = 0 coefficient carries 1/Y_0 = |S^{n-1}|^{1/2}.
inline FieldState radial_state(std::shared_ptr<const ModeBasis> b, const std::function<cplx(double)>& U)
{
    const double s = std::sqrt(sphere_area(b->metric.n));
    return state_from_profile(std::move(b), 0, [&](double r) { return s * U(r); });
}

inline double l2_norm(const FieldState& s)
{
    double a = 0;
    for (const auto& v : s.coeffs)
        for (const auto& x : v) a += std::norm(x);
    return std::sqrt(a * s.basis->dr);
}

inline cplx inner(const FieldState& a, const FieldState& b)
{
    cplx s = 0;
    for (std::size_t l = 0; l < a.coeffs.size(); ++l)
        for (std::size_t i = 0; i < a.coeffs[l].size(); ++i) s += std::conj(a.coeffs[l][i]) * b.coeffs[l][i];
    return s * a.basis->dr;
}

inline FieldState axpy(cplx a, const FieldState& x, const FieldState& y)
{
    FieldState out = y;
    for (std::size_t l = 0; l < out.coeffs.size(); ++l)
        for (std::size_t i = 0; i < out.coeffs[l].size(); ++i) out.coeffs[l][i] += a * x.coeffs[l][i];
    return out;
}

// ---------------------------------------------------------------------------
// Functional calculus by eigendecomposition

// Eigen-coefficients c_k = <z_k, v> for a batch of vectors (columns of V, N x m).
inline std::vector<cplx> to_eigen(const RadialModeOperator& op, const std::vector<cplx>& v)
{
    const std::size_t N = op.size(), M = op.modes();
    std::vector<double> in(2 * N), out(2 * M);
    for (std::size_t i = 0; i < N; ++i) {
        in[i] = v[i].real();
        in[N + i] = v[i].imag();
    }
    cblas_dgemm(CblasColMajor, CblasTrans, CblasNoTrans, M, 2, N, 1.0, op.Z.data(), N, in.data(), N, 0.0, out.data(), M);
    std::vector<cplx> c(M);
    for (std::size_t k = 0; k < M; ++k) c[k] = {out[k], out[M + k]};
    return c;
}

inline std::vector<cplx> from_eigen(const RadialModeOperator& op, const std::vector<cplx>& c)
{
    const std::size_t N = op.size(), M = op.modes();
    std::vector<double> in(2 * M), out(2 * N);
    for (std::size_t k = 0; k < M; ++k) {
        in[k] = c[k].real();
        in[M + k] = c[k].imag();
    }
    cblas_dgemm(CblasColMajor, CblasNoTrans, CblasNoTrans, N, 2, M, 1.0, op.Z.data(), N, in.data(), M, 0.0, out.data(), N);
    std::vector<cplx> v(N);
    for (std::size_t i = 0; i < N; ++i) v[i] = {out[i], out[N + i]};
    return v;
}

// Batched synthesis: columns k of C (M x m, column-major complex) to nodal values.
inline std::vector<cplx> from_eigen_batch(const RadialModeOperator& op, const std::vector<cplx>& C, std::size_t m)
{
    const std::size_t N = op.size(), M = op.modes();
    std::vector<double> in(2 * M * m), out(2 * N * m);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < M; ++k) {
            in[k + 2 * j * M] = C[k + j * M].real();
            in[k + (2 * j + 1) * M] = C[k + j * M].imag();
        }
    cblas_dgemm(CblasColMajor, CblasNoTrans, CblasNoTrans, N, 2 * m, M, 1.0, op.Z.data(), N, in.data(), M, 0.0, out.data(), N);
    std::vector<cplx> V(N * m);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < N; ++i) V[i + j * N] = {out[i + 2 * j * N], out[i + (2 * j + 1) * N]};
    return V;
}

using SpectralFn = std::function<cplx(double)>;

inline std::vector<cplx> apply_spectral_function(const RadialModeOperator& op, const SpectralFn& fn, const std::vector<cplx>& v)
{
    auto c = to_eigen(op, v);
    for (std::size_t k = 0; k < c.size(); ++k) c[k] *= fn(op.lambda[k]);
    return from_eigen(op, c);
}

inline FieldState apply_spectral_function(const FieldState& s, const SpectralFn& fn)
{
    FieldState out = s;
    parallel_for(s.coeffs.size(), [&](std::size_t l) { out.coeffs[l] = apply_spectral_function(s.basis->ops[l], fn, s.coeffs[l]); });
    return out;
}

inline FieldState apply_operator(const FieldState& s)
{
    FieldState out = s;
    for (std::size_t l = 0; l < s.coeffs.size(); ++l) out.coeffs[l] = apply_operator(s.basis->ops[l], s.coeffs[l]);
    return out;
}

// <P v, v> through the eigen-coefficients.
inline double energy(const FieldState& s)
{
    double e = 0;
    for (std::size_t l = 0; l < s.coeffs.size(); ++l) {
        const auto c = to_eigen(s.basis->ops[l], s.coeffs[l]);
        for (std::size_t k = 0; k < c.size(); ++k) e += s.basis->ops[l].lambda[k] * std::norm(c[k]);
    }
    return e * s.basis->dr;
}

// ---------------------------------------------------------------------------
// Angular reconstruction (axisymmetric, n = 2 or 3)

struct AngularGrid {
    int n = 3;
    std::vector<double> theta;            // polar angle of each node
    std::vector<double> weight;           // includes the sphere measure
    std::vector<std::vector<double>> Y;   // Y[ell][k], L2(sphere)-normalized
};

inline AngularGrid make_angular_grid(int n, int ell_max, std::size_t nodes)
{
    AngularGrid g;
    g.n = n;
    if (n == 3) {
        if (2 * ell_max > 2 * static_cast<int>(nodes) - 1)
            throw std::invalid_argument("angular grid: ell_max " + std::to_string(ell_max) + " exceeds the Legendre exactness of " +
                                        std::to_string(nodes) + " nodes");
        const Rule q = gauss_legendre(nodes);
        for (std::size_t k = 0; k < nodes; ++k) {
            g.theta.push_back(std::acos(q.x[k]));
            g.weight.push_back(2 * std::numbers::pi * q.w[k]);
        }
        g.Y.assign(ell_max + 1, std::vector<double>(nodes));
        for (std::size_t k = 0; k < nodes; ++k) {
            const double x = q.x[k];
            double p0 = 1, p1 = x;
            for (int l = 0; l <= ell_max; ++l) {
                double p = l == 0 ? p0 : p1;
                if (l >= 2) {
                    const double p2 = ((2.0 * l - 1) * x * p1 - (l - 1.0) * p0) / l;
                    p0 = p1;
                    p1 = p2;
                    p = p2;
                }
                g.Y[l][k] = std::sqrt((2.0 * l + 1) / (4 * std::numbers::pi)) * p;
            }
        }
    } else if (n == 2) {
        if (2 * ell_max >= static_cast<int>(nodes))
            throw std::invalid_argument("angular grid: ell_max " + std::to_string(ell_max) + " needs more than " +
                                        std::to_string(nodes) + " nodes on the circle");
        for (std::size_t k = 0; k < nodes; ++k) {
            g.theta.push_back(2 * std::numbers::pi * k / nodes);
            g.weight.push_back(2 * std::numbers::pi / nodes);
        }
        g.Y.assign(ell_max + 1, std::vector<double>(nodes));
        for (int l = 0; l <= ell_max; ++l)
            for (std::size_t k = 0; k < nodes; ++k)
                g.Y[l][k] = l == 0 ? 1 / std::sqrt(2 * std::numbers::pi) : std::cos(l * g.theta[k]) / std::sqrt(std::numbers::pi);
    } else {
        throw std::invalid_argument("angular grid: only n = 2 and n = 3 are supported");
    }
    return g;
}

// 3/2 collocation rule
inline std::size_t default_angular_nodes(int n, int ell_max)
{
    return n == 3 ? static_cast<std::size_t>(3 * (ell_max + 1) / 2 + 1) : static_cast<std::size_t>(3 * ell_max + 2);
}

// Physical values u(r_i, theta_k), row-major [i][k].
inline std::vector<cplx> to_physical(const FieldState& s, const AngularGrid& g)
{
    const auto& b = *s.basis;
    const std::size_t N = b.size(), K = g.theta.size();
    std::vector<cplx> u(N * K, cplx{});
    for (std::size_t i = 0; i < N; ++i) {
        const double gauge = std::pow(b.metric.f(b.r()[i]), -0.5 * (b.metric.n - 1));
        for (std::size_t l = 0; l < s.coeffs.size(); ++l) {
            const cplx v = s.coeffs[l][i] * gauge;
            if (v == cplx{}) continue;
            for (std::size_t k = 0; k < K; ++k) u[i * K + k] += v * g.Y[l][k];
        }
    }
    return u;
}

// Projection of physical values onto the modes of `like`.
inline FieldState from_physical(const std::vector<cplx>& u, const AngularGrid& g, const FieldState& like)
{
    FieldState s = zero_state(like.basis);
    s.t = like.t;
    const auto& b = *s.basis;
    const std::size_t N = b.size(), K = g.theta.size();
    for (std::size_t i = 0; i < N; ++i) {
        const double gauge = std::pow(b.metric.f(b.r()[i]), 0.5 * (b.metric.n - 1));
        for (std::size_t l = 0; l < s.coeffs.size(); ++l) {
            cplx a = 0;
            for (std::size_t k = 0; k < K; ++k) a += g.weight[k] * g.Y[l][k] * u[i * K + k];
            s.coeffs[l][i] = a * gauge;
        }
    }
    return s;
}

// L^q(M) norm of the reconstructed state; q = infinity gives the grid sup.
inline double lq_norm(const FieldState& s, double q, std::size_t angular_nodes = 0)
{
    if (!(q >= 1)) throw std::invalid_argument("lq_norm: q must be >= 1");
    const int n = s.n();
    const auto g = make_angular_grid(n, s.ell_max(), angular_nodes ? angular_nodes : default_angular_nodes(n, s.ell_max()));
    const auto u = to_physical(s, g);
    const auto& b = *s.basis;
    const std::size_t K = g.theta.size();
    if (std::isinf(q)) {
        double m = 0;
        for (const auto& x : u) m = std::max(m, std::abs(x));
        return m;
    }
    double acc = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        double a = 0;
        for (std::size_t k = 0; k < K; ++k) a += g.weight[k] * std::pow(std::abs(u[i * K + k]), q);
        acc += a * std::pow(b.metric.f(b.r()[i]), n - 1);
    }
    return std::pow(acc * b.dr, 1 / q);
}

enum class ScaleType { h_type, eps_type };

// || <r>^mu (h^2 P + 1)^j u ||, or || <eps r>^mu (P/eps^2 + 1)^j u || for the eps type.
inline double weighted_norm(const FieldState& s, double mu, double j, ScaleType type, double scale = 1.0)
{
    if (!(scale > 0)) throw std::invalid_argument("weighted_norm: scale must be positive");
    FieldState w = s;
    if (j != 0) {
        const double c = type == ScaleType::h_type ? scale * scale : 1 / (scale * scale);
        w = apply_spectral_function(s, [&](double lam) { return cplx(std::pow(c * lam + 1, j)); });
    }
    if (mu != 0) {
        const double a = type == ScaleType::h_type ? 1.0 : scale;
        for (auto& v : w.coeffs)
            for (std::size_t i = 0; i < v.size(); ++i) v[i] *= std::pow(japanese(a * w.basis->r()[i]), mu);
    }
    return l2_norm(w);
}

// ---------------------------------------------------------------------------
// Light-cone rule for Dirichlet boxes

struct LightCone {
    double lambda_max = 0; // spectral edge of the data
    double r_support = 0;  // radial edge of the data
    double horizon = 0;
    double reach = 0;      // 2 sqrt(lambda_max) T + r_support
    double limit = 0;      // 0.8 R_max
    bool ok = true;
};

class LightConeViolation : public std::runtime_error {
public:
    LightConeViolation(const std::string& w, LightCone c) : std::runtime_error(w), cone(c) {}
    LightCone cone;
};

// Edges are where the discarded tail carries at most tol of the L2 norm.
inline LightCone light_cone(const FieldState& s, double T, double tol = 1e-2)
{
    LightCone c;
    c.horizon = std::abs(T);
    c.limit = 0.8 * s.basis->R_max;
    const double total = std::pow(l2_norm(s), 2) / s.basis->dr;
    if (total == 0) return c;
    const double budget = tol * tol * total;
    std::vector<std::pair<double, double>> spec;
    for (std::size_t l = 0; l < s.coeffs.size(); ++l) {
        const auto cf = to_eigen(s.basis->ops[l], s.coeffs[l]);
        for (std::size_t k = 0; k < cf.size(); ++k) spec.emplace_back(s.basis->ops[l].lambda[k], std::norm(cf[k]));
    }
    std::sort(spec.begin(), spec.end());
    double tail = 0;
    c.lambda_max = 0;
    for (std::size_t k = spec.size(); k-- > 0;) {
        tail += spec[k].second;
        if (tail > budget) {
            c.lambda_max = std::max(0.0, spec[k].first);
            break;
        }
    }
    const auto& r = s.basis->r();
    tail = 0;
    for (std::size_t i = r.size(); i-- > 0;) {
        for (const auto& v : s.coeffs) tail += std::norm(v[i]);
        if (tail > budget) {
            c.r_support = r[i];
            break;
        }
    }
    c.reach = 2 * std::sqrt(c.lambda_max) * c.horizon + c.r_support;
    c.ok = c.reach <= c.limit;
    return c;
}

inline LightCone enforce_light_cone(const FieldState& s, double T, double tol = 1e-2)
{
    auto c = light_cone(s, T, tol);
    if (!c.ok) {
        std::ostringstream m;
        m << "light-cone rule violated: 2 sqrt(" << c.lambda_max << ") * " << c.horizon << " + " << c.r_support << " = " << c.reach
          << " > 0.8 R_max = " << c.limit;
        throw LightConeViolation(m.str(), c);
    }
    return c;
}

// ---------------------------------------------------------------------------
// Littlewood-Paley

namespace detail {
inline double smooth_transition(double t)
{
    if (t <= 0) return 0;
    if (t >= 1) return 1;
    const double a = std::exp(-1 / t), b = std::exp(-1 / (1 - t));
    return a / (a + b);
}
} // namespace detail

// Smooth bump, 1 on [-1, 1], supported in [-2, 2].
inline double lp_f0(double x) { return 1 - detail::smooth_transition(std::abs(x) - 1); }

// Dyadic cutoff f(x) = f0(x) - f0(2x), supported in 1/2 <= |x| <= 2.
inline double lp_f(double x) { return lp_f0(x) - lp_f0(2 * x); }

enum class LpDirection { low, high };

// Band ell: low uses f(P / eps^2) with eps^2 = 2^-ell (ell >= 0), high uses f(h^2 P) with
// h^2 = 2^-ell (ell >= 1).
struct DyadicBand {
    int index = 0;
    LpDirection direction = LpDirection::low;

    double scale() const { return std::pow(2.0, -0.5 * index); }
    // argument fed to f
    double argument(double lambda) const
    {
        const double s2 = std::pow(2.0, -static_cast<double>(index));
        return direction == LpDirection::low ? lambda / s2 : s2 * lambda;
    }
    double multiplier(double lambda) const { return lp_f(argument(lambda)); }
};

struct LpResidual {
    double max_residual = 0;
    double max_tail = 0; // analytic remainder of the truncated telescope
};

// Truncated telescoping sums against f0 (low) or 1 - f0 (high), with L terms.
inline LpResidual lp_reconstruct(const std::function<double(double)>& f0, const std::vector<double>& lambdas, LpDirection dir,
                                 int L = 30)
{
    LpResidual out;
    auto f = [&](double x) { return f0(x) - f0(2 * x); };
    for (double lam : lambdas) {
        if (!(lam > 0)) throw std::invalid_argument("lp_reconstruct: samples must be positive (0 is not an eigenvalue)");
        double sum = 0, target, tail;
        if (dir == LpDirection::low) {
            for (int l = 0; l <= L; ++l) sum += f(std::ldexp(lam, l));
            target = f0(lam);
            tail = std::abs(f0(std::ldexp(lam, L + 1)));
        } else {
            for (int l = 1; l <= L; ++l) sum += f(std::ldexp(lam, -l));
            target = 1 - f0(lam);
            tail = std::abs(f0(std::ldexp(lam, -L)) - 1);
        }
        out.max_residual = std::max(out.max_residual, std::abs(sum - target));
        out.max_tail = std::max(out.max_tail, tail);
    }
    return out;
}

// || f(2^j P) f(2^l P) || on the discrete spectrum of every mode in the basis.
inline double band_product_norm(const ModeBasis& b, int j, int l)
{
    double m = 0;
    for (const auto& op : b.ops)
        for (double lam : op.lambda) m = std::max(m, std::abs(lp_f(std::ldexp(lam, j)) * lp_f(std::ldexp(lam, l))));
    return m;
}

inline FieldState apply_band(const FieldState& s, const DyadicBand& band)
{
    return apply_spectral_function(s, [&](double lam) { return cplx(band.multiplier(lam)); });
}

inline FieldState multiply_radial(const FieldState& s, const std::function<double(double)>& w)
{
    FieldState out = s;
    const auto& r = s.basis->r();
    for (auto& v : out.coeffs)
        for (std::size_t i = 0; i < v.size(); ++i) v[i] *= w(r[i]);
    return out;
}

struct LpInequalityReport {
    LpDirection direction = LpDirection::low;
    double q = 0;
    double lhs = 0;
    double rhs = 0;
    double ratio = 0;
    std::vector<double> band_lq;  // cutoff L^q term per band
    std::vector<double> band_l2;  // weighted L^2 term per band
};

struct LpInequalityOptions {
    int bands = 12;                 // number of terms kept in the square function
    double chi_radius = 2;          // chi = f0(x / chi_radius): 1 on |x| <= chi_radius
    int N = 2;                      // weight power for the high variant
};

// Low: ||f0(P) v||_q against (sum ||(1-chi)(eps r) f(P/eps^2) v||_q^2 + ||<r>^-1 f(P/eps^2) v||_2^2)^{1/2}.
// High: ||(1-chi)(r)(1-f0)(P) v||_q against (sum ||(1-chi)(r) f(h^2 P) v||_q^2 + h^N ||<r>^-N f(h^2 P) v||_2^2)^{1/2}.
inline LpInequalityReport lp_inequality_probe(const FieldState& v, double q, LpDirection dir, const LpInequalityOptions& o = {})
{
    const int n = v.n();
    if (dir == LpDirection::low) {
        if (n < 3) throw std::invalid_argument("lp_inequality_probe: the low-frequency check needs n >= 3");
        const double qstar = 2.0 * n / (n - 2);
        if (std::abs(q - qstar) > 1e-12) throw std::invalid_argument("lp_inequality_probe: the low-frequency check uses q = 2n/(n-2)");
    } else if (!(q >= 2) || std::isinf(q)) {
        throw std::invalid_argument("lp_inequality_probe: q must lie in [2, infinity)");
    }
    auto chi = [&](double x) { return lp_f0(x / o.chi_radius); };
    LpInequalityReport rep;
    rep.direction = dir;
    rep.q = q;
    double rhs2 = 0;
    if (dir == LpDirection::low) {
        rep.lhs = lq_norm(apply_spectral_function(v, [](double lam) { return cplx(lp_f0(lam)); }), q);
        for (int l = 0; l < o.bands; ++l) {
            const DyadicBand band{l, LpDirection::low};
            const double eps = band.scale();
            const FieldState fb = apply_band(v, band);
            const double a = lq_norm(multiply_radial(fb, [&](double r) { return 1 - chi(eps * r); }), q);
            const double b = l2_norm(multiply_radial(fb, [](double r) { return 1 / japanese(r); }));
            rep.band_lq.push_back(a);
            rep.band_l2.push_back(b);
            rhs2 += a * a + b * b;
        }
    } else {
        const FieldState hi = apply_spectral_function(v, [](double lam) { return cplx(1 - lp_f0(lam)); });
        rep.lhs = lq_norm(multiply_radial(hi, [&](double r) { return 1 - chi(r); }), q);
        for (int l = 1; l <= o.bands; ++l) {
            const DyadicBand band{l, LpDirection::high};
            const double h = band.scale();
            const FieldState fb = apply_band(v, band);
            const double a = lq_norm(multiply_radial(fb, [&](double r) { return 1 - chi(r); }), q);
            const double b = l2_norm(multiply_radial(fb, [&](double r) { return std::pow(japanese(r), -o.N); }));
            rep.band_lq.push_back(a);
            rep.band_l2.push_back(b);
            rhs2 += a * a + std::pow(h, o.N) * b * b;
        }
    }
    rep.rhs = std::sqrt(rhs2);
    rep.ratio = rep.rhs > 0 ? rep.lhs / rep.rhs : 0;
    return rep;
}

// Random axisymmetric state: each listed low band receives a band-projected sum of Gaussian
// packets at the band's spatial scale with random complex weights.
inline FieldState random_multiband_state(std::shared_ptr<const ModeBasis> b, const std::vector<int>& bands, std::uint64_t seed,
                                         int packets = 3)
{
    CounterRng rng(seed);
    FieldState total = zero_state(b);
    for (int j : bands) {
        const double eps = std::pow(2.0, -0.5 * j);
        FieldState w = zero_state(b);
        for (int l = 0; l <= w.ell_max(); ++l)
            for (int p = 0; p < packets; ++p) {
                const double c = rng.uniform(0, 3) / eps, width = rng.uniform(0.5, 1.5) / eps;
                const cplx a(rng.normal(), rng.normal());
                const auto one = state_from_profile(b, l, [&](double r) { return a * std::exp(-0.5 * std::pow((r - c) / width, 2)); });
                w = axpy(1.0, one, w);
            }
        w = apply_band(w, {j, LpDirection::low});
        const double nw = l2_norm(w);
        if (nw > 0) total = axpy(1.0 / nw, w, total);
    }
    return total;
}

// ---------------------------------------------------------------------------
// Weighted resolvent

enum class LambdaPlacement { gap_midpoint, eigenvalue, as_given };

struct ResolventOptions {
    std::vector<double> deltas{1e-1, 1e-2, 1e-3, 1e-4};
    double weight_exponent = 1;     // W = <r>^{-k}
    LambdaPlacement placement = LambdaPlacement::gap_midpoint;
    double plateau_tol = 0.1;       // relative change over the last two deltas
    int max_iter = 4000;
    double tol = 1e-10;
};

struct ResolventModeResult {
    int ell = 0;
    double lambda = 0;              // energy actually probed for this mode
    std::vector<double> norms;      // per delta
};

struct ResolventReport {
    double lambda_requested = 0;
    double window_lo = 0, window_hi = 0;
    std::vector<double> deltas;
    std::vector<double> norms;      // max over modes, per delta
    std::vector<ResolventModeResult> modes;
    bool plateau = false;
    double plateau_level = 0;
};

// Valid energies: well above the lowest level spacing, well below the grid Nyquist energy.
inline std::pair<double, double> resolvent_window(const ModeBasis& b)
{
    const auto& lam = b.ops.front().lambda;
    const double spacing = lam.size() > 1 ? lam[1] - lam[0] : lam[0];
    return {10 * std::max(spacing, lam[0]), 0.25 * std::pow(std::numbers::pi / b.dr, 2)};
}

// || W (A - z)^{-1} W || by power iteration on the normal operator with banded solves.
inline double weighted_resolvent_norm(const RadialModeOperator& op, cplx z, double weight_exponent, int max_iter = 4000,
                                      double tol = 1e-10)
{
    const lapack_int N = static_cast<lapack_int>(op.size());
    std::vector<double> W(N);
    for (lapack_int i = 0; i < N; ++i) W[i] = std::pow(japanese(op.r[i]), -weight_exponent);
    auto solve = [&](cplx zz, std::vector<cplx>& x) {
        std::vector<lapack_complex_double> dl(N - 1), d(N), du(N - 1), b(N);
        for (lapack_int i = 0; i < N; ++i) {
            d[i] = op.diag[i] - zz;
            b[i] = x[i];
        }
        for (lapack_int i = 0; i + 1 < N; ++i) dl[i] = du[i] = op.offdiag;
        const lapack_int info = LAPACKE_zgtsv(LAPACK_COL_MAJOR, N, 1, dl.data(), d.data(), du.data(), b.data(), N);
        if (info != 0) throw std::runtime_error("weighted_resolvent_norm: singular system at z on the spectrum");
        for (lapack_int i = 0; i < N; ++i) x[i] = b[i];
    };
    std::vector<cplx> x(N);
    CounterRng rng(0x5eed);
    for (auto& v : x) v = {rng.normal(), rng.normal()};
    double prev = 0, sigma = 0;
    for (int it = 0; it < max_iter; ++it) {
        double nx = 0;
        for (const auto& v : x) nx += std::norm(v);
        nx = std::sqrt(nx);
        for (auto& v : x) v /= nx;
        for (lapack_int i = 0; i < N; ++i) x[i] *= W[i];
        solve(z, x);
        for (lapack_int i = 0; i < N; ++i) x[i] *= W[i] * W[i];
        solve(std::conj(z), x);
        for (lapack_int i = 0; i < N; ++i) x[i] *= W[i];
        double ny = 0;
        for (const auto& v : x) ny += std::norm(v);
        sigma = std::sqrt(std::sqrt(ny));
        if (it > 5 && std::abs(sigma - prev) <= tol * sigma) break;
        prev = sigma;
    }
    return sigma;
}

inline double place_lambda(const RadialModeOperator& op, double lambda, LambdaPlacement p)
{
    if (p == LambdaPlacement::as_given) return lambda;
    const auto& lam = op.lambda;
    auto it = std::lower_bound(lam.begin(), lam.end(), lambda);
    if (it == lam.begin() || it == lam.end()) return lambda;
    const double lo = *(it - 1), hi = *it;
    if (p == LambdaPlacement::eigenvalue) return (lambda - lo < hi - lambda) ? lo : hi;
    return 0.5 * (lo + hi);
}

inline ResolventReport resolvent_probe(const ModeBasis& b, double lambda, const ResolventOptions& o = {})
{
    ResolventReport rep;
    rep.lambda_requested = lambda;
    std::tie(rep.window_lo, rep.window_hi) = resolvent_window(b);
    if (!(lambda >= rep.window_lo && lambda <= rep.window_hi)) {
        std::ostringstream m;
        m << "resolvent_probe: lambda = " << lambda << " outside the valid window [" << rep.window_lo << ", " << rep.window_hi << "]";
        throw std::invalid_argument(m.str());
    }
    rep.deltas = o.deltas;
    rep.modes.resize(b.ops.size());
    parallel_for(b.ops.size(), [&](std::size_t l) {
        auto& mr = rep.modes[l];
        mr.ell = static_cast<int>(l);
        mr.lambda = place_lambda(b.ops[l], lambda, o.placement);
        for (double d : o.deltas) mr.norms.push_back(weighted_resolvent_norm(b.ops[l], {mr.lambda, d}, o.weight_exponent, o.max_iter, o.tol));
    });
    rep.norms.assign(o.deltas.size(), 0.0);
    for (const auto& mr : rep.modes)
        for (std::size_t i = 0; i < o.deltas.size(); ++i) rep.norms[i] = std::max(rep.norms[i], mr.norms[i]);
    const std::size_t K = rep.norms.size();
    if (K >= 2) {
        const double a = rep.norms[K - 2], c = rep.norms[K - 1];
        rep.plateau = std::abs(c - a) <= o.plateau_tol * c;
    }
    rep.plateau_level = rep.norms.empty() ? 0 : rep.norms.back();
    return rep;
}

// ---------------------------------------------------------------------------
// Local smoothing

struct SmoothingReport {
    double T = 0;
    double ratio = 0;          // over [0, T]
    double ratio_half = 0;     // over [0, T/2]
    double increment = 0;      // ratio / ratio_half - 1
    double band_mass = 0;      // ||f(P/eps^2) u0|| / ||u0||
    LightCone cone;
};

// Per-mode time integral of ||W e^{-itP} g||^2 over dyadic panels; returns the cumulative
// values at T / 2^{panels - 1 - p}.
inline std::vector<double> weighted_time_integral(const FieldState& g, const std::function<double(double)>& weight, double T,
                                                  int panels = 10, std::size_t order = 16)
{
    std::vector<double> edges{0.0};
    for (int p = panels - 1; p >= 0; --p) edges.push_back(T / std::pow(2.0, p));
    const Rule ref = gauss_legendre(order);
    std::vector<double> times, wts;
    std::vector<int> panel_of;
    for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
        const double a = edges[p], c = edges[p + 1];
        for (std::size_t k = 0; k < order; ++k) {
            times.push_back(0.5 * (a + c) + 0.5 * (c - a) * ref.x[k]);
            wts.push_back(0.5 * (c - a) * ref.w[k]);
            panel_of.push_back(static_cast<int>(p));
        }
    }
    const std::size_t m = times.size();
    const auto& b = *g.basis;
    std::vector<double> W(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) W[i] = weight(b.r()[i]);
    std::vector<std::vector<double>> per_mode(g.coeffs.size(), std::vector<double>(m, 0.0));
    parallel_for(g.coeffs.size(), [&](std::size_t l) {
        const auto& op = b.ops[l];
        const auto c = to_eigen(op, g.coeffs[l]);
        const std::size_t M = op.modes(), N = op.size();
        std::vector<cplx> C(M * m);
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t k = 0; k < M; ++k) C[k + j * M] = c[k] * std::polar(1.0, -times[j] * op.lambda[k]);
        const auto V = from_eigen_batch(op, C, m);
        for (std::size_t j = 0; j < m; ++j) {
            double a = 0;
            for (std::size_t i = 0; i < N; ++i) a += W[i] * W[i] * std::norm(V[i + j * N]);
            per_mode[l][j] = a * b.dr;
        }
    });
    std::vector<double> cum(edges.size() - 1, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        double s = 0;
        for (const auto& pm : per_mode) s += pm[j];
        cum[panel_of[j]] += wts[j] * s;
    }
    for (std::size_t p = 1; p < cum.size(); ++p) cum[p] += cum[p - 1];
    return cum;
}

// (int_0^T ||<r>^{-1} e^{-itP} f(P/eps^2) u0||^2 dt)^{1/2} / ||u0||
inline SmoothingReport smoothing_probe(const FieldState& u0, const DyadicBand& band, double T)
{
    if (!(T > 0)) throw std::invalid_argument("smoothing_probe: T must be positive");
    SmoothingReport rep;
    rep.T = T;
    const double n0 = l2_norm(u0);
    if (n0 == 0) return rep;
    const FieldState g = apply_band(u0, band);
    rep.band_mass = l2_norm(g) / n0;
    // orthogonal to the band up to roundoff
    if (rep.band_mass <= 1e-12) return rep;
    rep.cone = enforce_light_cone(g, T);
    const auto cum = weighted_time_integral(g, [](double r) { return 1 / japanese(r); }, T);
    rep.ratio = std::sqrt(cum.back()) / n0;
    rep.ratio_half = std::sqrt(cum[cum.size() - 2]) / n0;
    rep.increment = rep.ratio / rep.ratio_half - 1;
    return rep;
}

// ---------------------------------------------------------------------------
// Sobolev quotient

inline double sobolev_exponent(int n)
{
    if (n < 3) throw std::invalid_argument("sobolev: needs n >= 3");
    return 2.0 * n / (n - 2);
}

// ||v||_{2*} / ||P^{1/2} v||_2, or 0 for the zero state
inline double sobolev_ratio(const FieldState& v)
{
    const double e = energy(v);
    if (!(e > 0)) return 0;
    return lq_norm(v, sobolev_exponent(v.n())) / std::sqrt(e);
}

struct SobolevReport {
    double max_ratio = 0;
    std::vector<double> ratios;
    std::size_t skipped = 0;
};

inline SobolevReport sobolev_probe(const std::vector<FieldState>& set)
{
    SobolevReport rep;
    for (const auto& v : set) {
        if (l2_norm(v) == 0) {
            ++rep.skipped;
            continue;
        }
        const double q = sobolev_ratio(v);
        rep.ratios.push_back(q);
        rep.max_ratio = std::max(rep.max_ratio, q);
    }
    return rep;
}

struct SobolevExtremizer {
    FieldState state;
    double ratio = 0;
    int iterations = 0;
    bool converged = false;
};

// Nonlinear power iteration u <- P^{-1}(|u|^{2*-2} u) on the physical grid, renormalized.
// The quotient is nondecreasing along the iteration for real data.
inline SobolevExtremizer sobolev_extremizer(const FieldState& start, int max_iter = 400, double tol = 1e-10)
{
    const int n = start.n();
    const double p = sobolev_exponent(n);
    const auto g = make_angular_grid(n, start.ell_max(), default_angular_nodes(n, start.ell_max()));
    SobolevExtremizer out;
    out.state = start;
    out.ratio = sobolev_ratio(start);
    for (int it = 1; it <= max_iter; ++it) {
        auto u = to_physical(out.state, g);
        for (auto& x : u) x *= std::pow(std::abs(x), p - 2);
        FieldState next = from_physical(u, g, out.state);
        next = apply_spectral_function(next, [](double lam) { return cplx(1 / lam); });
        const double nn = std::sqrt(energy(next));
        if (!(nn > 0)) break;
        for (auto& v : next.coeffs)
            for (auto& x : v) x /= nn;
        const double q = sobolev_ratio(next);
        out.iterations = it;
        const double change = std::abs(q - out.ratio);
        out.state = std::move(next);
        out.ratio = q;
        if (change <= tol * q) {
            out.converged = true;
            break;
        }
    }
    return out;
}

} // namespace conic
