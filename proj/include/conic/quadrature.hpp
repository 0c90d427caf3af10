#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace conic {

struct Rule {
    std::vector<double> x;
    std::vector<double> w;
};

// Gauss-Legendre nodes/weights on [-1, 1] via Newton on the three-term recurrence.
inline Rule gauss_legendre(std::size_t n)
{
    if (n == 0) throw std::invalid_argument("gauss_legendre: n must be positive");
    Rule q{std::vector<double>(n), std::vector<double>(n)};
    const std::size_t m = (n + 1) / 2;
    for (std::size_t i = 0; i < m; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double pp = 0;
        for (int it = 0; it < 100; ++it) {
            double p1 = 1, p2 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j - 1) * z * p2 - (j - 1.0) * p3) / j;
            }
            pp = n * (z * p1 - p2) / (z * z - 1);
            double dz = p1 / pp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        {
            double p1 = 1, p2 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j - 1) * z * p2 - (j - 1.0) * p3) / j;
            }
            pp = n * (z * p1 - p2) / (z * z - 1);
        }
        q.x[i] = -z;
        q.x[n - 1 - i] = z;
        q.w[i] = q.w[n - 1 - i] = 2 / ((1 - z * z) * pp * pp);
    }
    return q;
}

inline Rule gauss_legendre(std::size_t n, double a, double b)
{
    Rule q = gauss_legendre(n);
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    for (std::size_t i = 0; i < n; ++i) {
        q.x[i] = c + h * q.x[i];
        q.w[i] *= h;
    }
    return q;
}

// Composite Gauss-Legendre with `panels` equal panels of `order` points each.
inline Rule composite_gauss(std::size_t order, std::size_t panels, double a, double b)
{
    Rule out;
    const Rule base = gauss_legendre(order);
    const double H = (b - a) / panels;
    for (std::size_t p = 0; p < panels; ++p) {
        const double lo = a + p * H;
        for (std::size_t i = 0; i < order; ++i) {
            out.x.push_back(lo + 0.5 * H * (base.x[i] + 1));
            out.w.push_back(0.5 * H * base.w[i]);
        }
    }
    return out;
}

// Chebyshev-Lobatto nodes on [a, b], ascending.
inline std::vector<double> cheb_lobatto(std::size_t n, double a, double b)
{
    if (n < 2) throw std::invalid_argument("cheb_lobatto: need at least two nodes");
    std::vector<double> x(n);
    const std::size_t N = n - 1;
    for (std::size_t j = 0; j < n; ++j) {
        double t = -std::cos(std::numbers::pi * j / N);
        x[j] = 0.5 * (a + b) + 0.5 * (b - a) * t;
    }
    x.front() = a;
    x.back() = b;
    return x;
}

// Barycentric interpolation on Chebyshev-Lobatto nodes.
struct ChebInterp {
    std::vector<double> x;
    std::vector<double> w;

    explicit ChebInterp(std::vector<double> nodes) : x(std::move(nodes)), w(x.size())
    {
        for (std::size_t j = 0; j < x.size(); ++j) {
            w[j] = (j % 2 == 0) ? 1.0 : -1.0;
            if (j == 0 || j + 1 == x.size()) w[j] *= 0.5;
        }
    }
    // weights l_j(t) such that p(t) = sum_j l_j f_j
    void weights(double t, std::vector<double>& l) const
    {
        l.assign(x.size(), 0.0);
        for (std::size_t j = 0; j < x.size(); ++j)
            if (t == x[j]) {
                l[j] = 1;
                return;
            }
        double s = 0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            l[j] = w[j] / (t - x[j]);
            s += l[j];
        }
        for (auto& v : l) v /= s;
    }
};

// Matrix Q (row-major, n x n) with (Q f)_i = integral from nodes[0] to nodes[i] of the
// Chebyshev interpolant of f on the Lobatto nodes.
inline std::vector<double> cheb_cumulative_matrix(const std::vector<double>& nodes)
{
    const std::size_t n = nodes.size();
    const std::size_t N = n - 1;
    const double a = nodes.front(), b = nodes.back(), half = 0.5 * (b - a);
    std::vector<double> Q(n * n, 0.0);
    // node j in [-1,1] ascending: t_j = -cos(pi j / N)
    std::vector<double> t(n);
    for (std::size_t j = 0; j < n; ++j) t[j] = -std::cos(std::numbers::pi * j / N);
    std::vector<double> c(n + 2), C(n + 2);
    for (std::size_t col = 0; col < n; ++col) {
        // coefficients of the interpolant of the unit vector e_col
        for (std::size_t k = 0; k <= N; ++k) {
            double s = 0;
            for (std::size_t j = 0; j <= N; ++j) {
                double fj = (j == col) ? 1.0 : 0.0;
                if (fj == 0) continue;
                double wj = (j == 0 || j == N) ? 0.5 : 1.0;
                s += wj * fj * std::cos(k * std::acos(t[j]));
            }
            c[k] = 2.0 / N * s;
        }
        c[0] *= 0.5;
        c[N] *= 0.5;
        c[N + 1] = 0;
        // antiderivative coefficients
        std::fill(C.begin(), C.end(), 0.0);
        for (std::size_t k = 1; k <= N + 1; ++k) {
            double cm = (k == 1) ? 2 * c[0] : c[k - 1];
            double cp = (k + 1 <= N) ? c[k + 1] : 0.0;
            C[k] = (cm - cp) / (2.0 * k);
        }
        auto eval = [&](double tt) {
            double s = 0;
            double th = std::acos(std::clamp(tt, -1.0, 1.0));
            for (std::size_t k = 1; k <= N + 1; ++k) s += C[k] * std::cos(k * th);
            return s;
        };
        const double base = eval(-1.0);
        for (std::size_t i = 0; i < n; ++i) Q[i * n + col] = half * (eval(t[i]) - base);
    }
    return Q;
}

} // namespace conic
