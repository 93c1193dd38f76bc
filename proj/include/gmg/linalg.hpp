#pragma once

#include <array>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <vector>

namespace gmg {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    double& operator[](int i) { return (&x)[i]; }
    double operator[](int i) const { return (&x)[i]; }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }

    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
};

// Row-major 3x3.
struct Mat3 {
    std::array<double, 9> m{};

    static Mat3 identity() {
        Mat3 r;
        r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
        return r;
    }

    double& operator()(int r, int c) { return m[r * 3 + c]; }
    double operator()(int r, int c) const { return m[r * 3 + c]; }

    Mat3 operator+(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] + o.m[i];
        return r;
    }
    Mat3 operator-(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] - o.m[i];
        return r;
    }
    Mat3 operator*(double s) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] * s;
        return r;
    }
    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0;
                for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
                r(i, j) = s;
            }
        return r;
    }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }

    double trace() const { return m[0] + m[4] + m[8]; }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }

    Vec3 col(int c) const { return {m[c], m[3 + c], m[6 + c]}; }
    void set_col(int c, const Vec3& v) {
        m[c] = v.x;
        m[3 + c] = v.y;
        m[6 + c] = v.z;
    }

    double max_abs() const {
        double r = 0;
        for (double v : m) r = std::max(r, std::abs(v));
        return r;
    }
};

inline Mat3 outer(const Vec3& a, const Vec3& b) {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r(i, j) = a[i] * b[j];
    return r;
}

inline bool is_orthonormal(const Mat3& r, double tol) {
    Mat3 g = r.transposed() * r - Mat3::identity();
    return g.max_abs() <= tol;
}

// Rotation about a unit axis by angle (Rodrigues).
inline Mat3 axis_angle_rotation(const Vec3& axis, double angle) {
    double c = std::cos(angle), s = std::sin(angle);
    Vec3 u = axis * (1.0 / axis.norm());
    Mat3 r;
    r.m = {c + u.x * u.x * (1 - c),       u.x * u.y * (1 - c) - u.z * s, u.x * u.z * (1 - c) + u.y * s,
           u.y * u.x * (1 - c) + u.z * s, c + u.y * u.y * (1 - c),       u.y * u.z * (1 - c) - u.x * s,
           u.z * u.x * (1 - c) - u.y * s, u.z * u.y * (1 - c) + u.x * s, c + u.z * u.z * (1 - c)};
    return r;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi). Works for any small n; the
// 3x3 case is what the moment pipeline uses. Eigenvalues are returned in
// descending order with eigenvectors as matching columns.
// ---------------------------------------------------------------------------
inline void jacobi_eigen_sym(std::vector<double>& a, int n, std::vector<double>& eigvals,
                             std::vector<double>& eigvecs, int max_sweeps = 64) {
    eigvecs.assign(std::size_t(n) * n, 0.0);
    for (int i = 0; i < n; ++i) eigvecs[std::size_t(i) * n + i] = 1.0;

    auto A = [&](int r, int c) -> double& { return a[std::size_t(r) * n + c]; };
    auto V = [&](int r, int c) -> double& { return eigvecs[std::size_t(r) * n + c]; };

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += A(p, q) * A(p, q);
        if (off < 1e-30) break;

        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double apq = A(p, q);
                if (std::abs(apq) < 1e-300) continue;
                double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < n; ++k) {
                    double akp = A(k, p), akq = A(k, q);
                    A(k, p) = c * akp - s * akq;
                    A(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    double apk = A(p, k), aqk = A(q, k);
                    A(p, k) = c * apk - s * aqk;
                    A(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    double vkp = V(k, p), vkq = V(k, q);
                    V(k, p) = c * vkp - s * vkq;
                    V(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    eigvals.resize(n);
    for (int i = 0; i < n; ++i) eigvals[i] = A(i, i);

    // Sort descending, permuting eigenvector columns alongside.
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (eigvals[order[j]] > eigvals[order[i]]) std::swap(order[i], order[j]);

    std::vector<double> sorted_vals(n);
    std::vector<double> sorted_vecs(std::size_t(n) * n);
    for (int c = 0; c < n; ++c) {
        sorted_vals[c] = eigvals[order[c]];
        for (int r = 0; r < n; ++r) sorted_vecs[std::size_t(r) * n + c] = V(r, order[c]);
    }
    eigvals = std::move(sorted_vals);
    eigvecs = std::move(sorted_vecs);
}

struct SymEig3 {
    Vec3 eigenvalues;  // descending
    Mat3 eigenvectors; // columns match eigenvalues
};

// Deterministic sign rule: the largest-magnitude entry of each eigenvector is
// made positive; magnitude ties resolve to the lowest index.
inline void apply_sign_rule(Mat3& vecs) {
    for (int c = 0; c < 3; ++c) {
        int arg = 0;
        double best = std::abs(vecs(0, c));
        for (int r = 1; r < 3; ++r) {
            if (std::abs(vecs(r, c)) > best) {
                best = std::abs(vecs(r, c));
                arg = r;
            }
        }
        if (vecs(arg, c) < 0)
            for (int r = 0; r < 3; ++r) vecs(r, c) = -vecs(r, c);
    }
}

inline SymEig3 eigen_sym3(const Mat3& s) {
    std::vector<double> a(s.m.begin(), s.m.end());
    std::vector<double> vals, vecs;
    jacobi_eigen_sym(a, 3, vals, vecs);
    SymEig3 out;
    out.eigenvalues = {vals[0], vals[1], vals[2]};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) out.eigenvectors(r, c) = vecs[std::size_t(r) * 3 + c];
    apply_sign_rule(out.eigenvectors);
    // Right-handed basis wins over the sign rule on the last column.
    if (out.eigenvectors.det() < 0) {
        for (int r = 0; r < 3; ++r) out.eigenvectors(r, 2) = -out.eigenvectors(r, 2);
    }
    return out;
}

}  // namespace gmg
