#pragma once

// Small math types, error hierarchy and threading helpers shared by the
// registration engine.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace rigidreg {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
    Vec3 operator-() const { return {-x, -y, -z}; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm2(const Vec3& v) { return dot(v, v); }
inline double norm(const Vec3& v) { return std::sqrt(norm2(v)); }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

struct IVec3 {
    int x = 0, y = 0, z = 0;
    int operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    bool operator==(const IVec3& o) const { return x == o.x && y == o.y && z == o.z; }
    bool operator!=(const IVec3& o) const { return !(*this == o); }
};

// Row-major 3x3 matrix, m[row][col].
struct Mat3 {
    double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};

    static Mat3 identity() {
        Mat3 r;
        r.m[0][0] = r.m[1][1] = r.m[2][2] = 1.0;
        return r;
    }

    double& operator()(int r, int c) { return m[r][c]; }
    double operator()(int r, int c) const { return m[r][c]; }

    Vec3 operator*(const Vec3& v) const {
        return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
                m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
                m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                r.m[i][j] = m[i][0] * o.m[0][j] + m[i][1] * o.m[1][j] + m[i][2] * o.m[2][j];
        return r;
    }

    Mat3 operator+(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[i][j] + o.m[i][j];
        return r;
    }

    Mat3 operator-(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[i][j] - o.m[i][j];
        return r;
    }

    Mat3 operator*(double s) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[i][j] * s;
        return r;
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
        return r;
    }

    double det() const {
        return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
               m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
               m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    }

    // Matrix of cofactors: d(det)/dM_ij.
    Mat3 cofactor() const {
        Mat3 c;
        c.m[0][0] = m[1][1] * m[2][2] - m[1][2] * m[2][1];
        c.m[0][1] = -(m[1][0] * m[2][2] - m[1][2] * m[2][0]);
        c.m[0][2] = m[1][0] * m[2][1] - m[1][1] * m[2][0];
        c.m[1][0] = -(m[0][1] * m[2][2] - m[0][2] * m[2][1]);
        c.m[1][1] = m[0][0] * m[2][2] - m[0][2] * m[2][0];
        c.m[1][2] = -(m[0][0] * m[2][1] - m[0][1] * m[2][0]);
        c.m[2][0] = m[0][1] * m[1][2] - m[0][2] * m[1][1];
        c.m[2][1] = -(m[0][0] * m[1][2] - m[0][2] * m[1][0]);
        c.m[2][2] = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        return c;
    }

    double frobenius_norm2() const {
        double s = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) s += m[i][j] * m[i][j];
        return s;
    }
};

// Rotation by `angle_rad` about unit axis, Rodrigues form.
inline Mat3 rotation_about_axis(const Vec3& axis, double angle_rad) {
    const double c = std::cos(angle_rad), s = std::sin(angle_rad), t = 1.0 - c;
    const Vec3 a = axis / norm(axis);
    Mat3 r;
    r.m[0][0] = t * a.x * a.x + c;
    r.m[0][1] = t * a.x * a.y - s * a.z;
    r.m[0][2] = t * a.x * a.z + s * a.y;
    r.m[1][0] = t * a.x * a.y + s * a.z;
    r.m[1][1] = t * a.y * a.y + c;
    r.m[1][2] = t * a.y * a.z - s * a.x;
    r.m[2][0] = t * a.x * a.z - s * a.y;
    r.m[2][1] = t * a.y * a.z + s * a.x;
    r.m[2][2] = t * a.z * a.z + c;
    return r;
}

// 3x3 matrix exponential by scaling-and-squaring on a Taylor series.
// Accurate to machine precision for the small matrices used here.
inline Mat3 mat3_exp(const Mat3& a) {
    double nrm = std::sqrt(a.frobenius_norm2());
    int scale = 0;
    while (nrm > 0.25) {
        nrm *= 0.5;
        ++scale;
    }
    Mat3 b = a * std::pow(0.5, scale);
    Mat3 result = Mat3::identity();
    Mat3 term = Mat3::identity();
    for (int k = 1; k <= 20; ++k) {
        term = term * b * (1.0 / k);
        result = result + term;
    }
    for (int i = 0; i < scale; ++i) result = result * result;
    return result;
}

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct GridMismatch : Error { using Error::Error; };
struct ConstantVolume : Error { using Error::Error; };
struct UnknownBody : Error { using Error::Error; };
struct DegenerateGeometry : Error { using Error::Error; };
struct EmptyBody : Error { using Error::Error; };
struct BodiesOverlapAfterMotion : Error { using Error::Error; };
struct NonFiniteLoss : Error { using Error::Error; };
struct AllFolded : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Deterministic random numbers.
//
// mt19937_64 output is pinned by the standard; the distributions are not, so
// uniform/normal draws are derived from the raw stream by hand. Same seed,
// same sequence, on any platform.

class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    double uniform() {  // [0, 1)
        return (eng_() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        // Box-Muller; one value per call, pair cached.
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    Vec3 unit_vector() {
        // Rejection sampling in the cube.
        while (true) {
            Vec3 v{uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)};
            const double n2 = norm2(v);
            if (n2 > 1e-6 && n2 <= 1.0) return v / std::sqrt(n2);
        }
    }

    uint64_t raw() { return eng_(); }

private:
    std::mt19937_64 eng_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

// ---------------------------------------------------------------------------
// Threading
//
// Gather-style kernels run over z-slabs. The slab partition depends only on
// the grid, never on the thread count, and reductions combine per-slab
// partials in slab order, so results are identical for any thread count.
// Scatter kernels stay single-threaded.

inline int& thread_count() {
    static int n = 1;
    return n;
}

// Calls fn(z) for z in [0, nz). Slabs of 8 planes are distributed over
// threads; with thread_count() == 1 everything runs inline.
template <typename Fn>
void parallel_for_z(int nz, Fn&& fn) {
    const int nthreads = std::min(thread_count(), nz);
    if (nthreads <= 1) {
        for (int z = 0; z < nz; ++z) fn(z);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    constexpr int kSlab = 8;
    const int nslabs = (nz + kSlab - 1) / kSlab;
    for (int t = 0; t < nthreads; ++t) {
        pool.emplace_back([=]() {
            for (int s = t; s < nslabs; s += nthreads) {
                const int z0 = s * kSlab;
                const int z1 = std::min(nz, z0 + kSlab);
                for (int z = z0; z < z1; ++z) fn(z);
            }
        });
    }
    for (auto& th : pool) th.join();
}

// Reduction over z planes: fn(z) returns a partial sum, partials are added
// in plane order regardless of how threads interleave.
template <typename Fn>
double parallel_sum_z(int nz, Fn&& fn) {
    std::vector<double> partial(static_cast<size_t>(nz), 0.0);
    parallel_for_z(nz, [&](int z) { partial[static_cast<size_t>(z)] = fn(z); });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

}  // namespace rigidreg
