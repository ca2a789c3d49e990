#include <catch2/catch_amalgamated.hpp>

#include "rigidreg/field.hpp"
#include "test_helpers.hpp"

using namespace rigidreg;

namespace {

VelocityField linear_velocity(IVec3 dims, const Mat3& a, const Vec3& center) {
    VelocityField v(dims);
    for (int z = 0; z < dims.z; ++z)
        for (int y = 0; y < dims.y; ++y)
            for (int x = 0; x < dims.x; ++x) {
                const Vec3 p = Vec3{static_cast<double>(x), static_cast<double>(y),
                                    static_cast<double>(z)} - center;
                v.at(x, y, z) = a * p;
            }
    return v;
}

}  // namespace

TEST_CASE("exp of the zero field is the identity") {
    VelocityField v({6, 6, 6});
    const DisplacementField phi = exp_svf(v, 7);
    for (const Vec3& u : phi.data) CHECK(norm(u) == 0.0);
}

TEST_CASE("exp of a constant field is exact for any step count") {
    VelocityField v({6, 6, 6});
    for (Vec3& u : v.data) u = {0.75, -1.25, 2.0};
    for (int steps : {0, 1, 7, 10}) {
        const DisplacementField phi = exp_svf(v, steps);
        for (const Vec3& u : phi.data) {
            CHECK(u.x == Catch::Approx(0.75).margin(1e-13));
            CHECK(u.y == Catch::Approx(-1.25).margin(1e-13));
            CHECK(u.z == Catch::Approx(2.0).margin(1e-13));
        }
    }
}

TEST_CASE("exp of a linear field matches the matrix-exponential oracle") {
    const IVec3 dims{16, 16, 16};
    const Vec3 c{7.5, 7.5, 7.5};
    Mat3 a;  // 0.05-scaled skew about the z axis
    a(0, 1) = -0.05;
    a(1, 0) = 0.05;

    const VelocityField v = linear_velocity(dims, a, c);
    const DisplacementField phi = exp_svf(v, 7);
    const Mat3 ea = mat3_exp(a);

    double max_err = 0.0;
    for (int z = 4; z < 12; ++z)
        for (int y = 4; y < 12; ++y)
            for (int x = 4; x < 12; ++x) {
                const Vec3 p = Vec3{static_cast<double>(x), static_cast<double>(y),
                                    static_cast<double>(z)} - c;
                const Vec3 want = ea * p + c;
                const Vec3 got = phi.map(x, y, z);
                max_err = std::max(max_err, norm(got - want));
            }
    CHECK(max_err < 1e-3);
}

TEST_CASE("doubling the steps beyond 7 barely changes smooth small fields") {
    Rng rng(41);
    const VelocityField v = test::make_smooth_field({12, 12, 12}, rng, 0.5);
    const DisplacementField p7 = exp_svf(v, 7);
    const DisplacementField p14 = exp_svf(v, 14);
    double max_diff = 0.0;
    for (size_t i = 0; i < p7.data.size(); ++i)
        max_diff = std::max(max_diff, norm(p7.data[i] - p14.data[i]));
    CHECK(max_diff < 1e-3);
}

TEST_CASE("exp(v) composed with exp(-v) stays near the identity") {
    Rng rng(43);
    const VelocityField v = test::make_smooth_field({12, 12, 12}, rng, 0.5);
    VelocityField vneg = v;
    for (Vec3& u : vneg.data) u = -u;
    const DisplacementField fwd = exp_svf(v, 7);
    const DisplacementField bwd = exp_svf(vneg, 7);
    const DisplacementField comp = compose(fwd, bwd);
    double max_residual = 0.0;
    for (int z = 2; z < 10; ++z)
        for (int y = 2; y < 10; ++y)
            for (int x = 2; x < 10; ++x)
                max_residual = std::max(max_residual, norm(comp.at(x, y, z)));
    CHECK(max_residual < 0.05);
}

TEST_CASE("adjoint with zero steps or zero field is the identity map") {
    const IVec3 dims{6, 6, 6};
    Rng rng(47);
    FieldGrad g(dims);
    for (Vec3& u : g.data) u = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};

    VelocityField v(dims);
    const FieldGrad a0 = exp_svf_adjoint(v, g, 0);
    for (size_t i = 0; i < g.data.size(); ++i) CHECK(norm(a0.data[i] - g.data[i]) == 0.0);

    const FieldGrad a7 = exp_svf_adjoint(v, g, 7);
    for (size_t i = 0; i < g.data.size(); ++i)
        CHECK(norm(a7.data[i] - g.data[i]) < 1e-13);
}

TEST_CASE("adjoint passes the finite-difference dot-product test") {
    const IVec3 dims{8, 8, 8};
    Rng rng(53);
    const VelocityField v = test::make_smooth_field(dims, rng, 0.3);

    // scalar functional: weighted sum of displacement components over the
    // interior (random fixed weights)
    FieldGrad w(dims);
    for (int z = 2; z < 6; ++z)
        for (int y = 2; y < 6; ++y)
            for (int x = 2; x < 6; ++x)
                w.at(x, y, z) = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};

    auto functional = [&](const VelocityField& vv) {
        const DisplacementField phi = exp_svf(vv, 7);
        return test::dot_fields(phi, w);
    };

    const SvfTape tape = exp_svf_tape(v, 7);
    const FieldGrad grad_v = exp_svf_adjoint(tape, w);

    VelocityField dir = test::make_smooth_field(dims, rng, 1.0);
    const double analytic = test::dot_fields(grad_v, dir);
    const double fd = test::fd_directional(functional, v, dir, 1e-4);
    CHECK(test::rel_err(analytic, fd) < 1e-3);
}

TEST_CASE("warping with the identity returns the volume") {
    Rng rng(59);
    const Volume vol = test::make_random_volume({7, 7, 7}, rng);
    DisplacementField id({7, 7, 7});
    const Volume w = warp_volume(vol, id);
    for (size_t i = 0; i < vol.data.size(); ++i) CHECK(w.data[i] == vol.data[i]);
}

TEST_CASE("warping a ramp by a translation shifts interior values") {
    const Volume ramp = test::make_ramp({8, 8, 8}, {1, 0, 0});
    DisplacementField t({8, 8, 8});
    for (Vec3& u : t.data) u = {1, 0, 0};
    const Volume w = warp_volume(ramp, t);
    for (int z = 0; z < 8; ++z)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 6; ++x)
                CHECK(w.at(x, y, z) == Catch::Approx(ramp.at(x, y, z) + 1.0));
}

TEST_CASE("soft label warps: identity is exact, half shifts give 0.5") {
    LabelVolume labels({8, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) labels.at(x, y, 4) = 2;  // one-voxel slab
    labels.refresh_body_ids();

    DisplacementField id({8, 8, 8});
    const Volume a = warp_label_soft(labels, 2, id);
    for (int z = 0; z < 8; ++z) CHECK(a.at(3, 3, z) == (z == 4 ? 1.0 : 0.0));

    DisplacementField half({8, 8, 8});
    for (Vec3& u : half.data) u = {0, 0, 0.5};
    const Volume b = warp_label_soft(labels, 2, half);
    CHECK(b.at(3, 3, 4) == Catch::Approx(0.5));
    CHECK(b.at(3, 3, 3) == Catch::Approx(0.5));
    CHECK(b.at(3, 3, 5) == Catch::Approx(0.0));

    CHECK_THROWS_AS(warp_label_soft(labels, 9, id), UnknownBody);
}

TEST_CASE("jacobian of identity, scaling, translation and rotation fields") {
    const IVec3 dims{8, 8, 8};

    DisplacementField id(dims);
    const JacobianField ji = jacobian(id);
    for (const Mat3& m : ji.data) {
        CHECK((m - Mat3::identity()).frobenius_norm2() == 0.0);
    }
    const Volume det_id = jacobian_det(ji);
    for (double d : det_id.data) CHECK(d == 1.0);

    Mat3 s = Mat3::identity() * 1.1;
    const DisplacementField scale = test::affine_field(dims, s, {0, 0, 0});
    const JacobianField js = jacobian(scale);
    const Volume det_s = jacobian_det(js);
    for (int z = 1; z < 7; ++z)
        for (int y = 1; y < 7; ++y)
            for (int x = 1; x < 7; ++x) {
                CHECK((js.at(x, y, z) - s).frobenius_norm2() < 1e-24);
                CHECK(det_s.at(x, y, z) == Catch::Approx(1.331));
            }

    DisplacementField trans(dims);
    for (Vec3& u : trans.data) u = {3.5, -2.25, 0.75};
    const Volume det_t = jacobian_det(jacobian(trans));
    for (double d : det_t.data) CHECK(d == Catch::Approx(1.0).margin(1e-15));

    RigidTransform rot;
    rot.rotation = rotation_about_axis({0.3, -0.5, 0.8}, 0.4);
    rot.center = {3.5, 3.5, 3.5};
    const DisplacementField rf = test::rigid_motion_field(dims, rot);
    const Volume det_r = jacobian_det(jacobian(rf));
    for (double d : det_r.data) CHECK(d == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("jacobian of an affine field is the affine matrix everywhere") {
    const IVec3 dims{6, 6, 6};
    Mat3 a = Mat3::identity();
    a(0, 1) = 0.2;
    a(2, 0) = -0.1;
    a(1, 1) = 1.05;
    const DisplacementField phi = test::affine_field(dims, a, {0.5, -1, 2});
    const JacobianField j = jacobian(phi);
    for (const Mat3& m : j.data) CHECK((m - a).frobenius_norm2() < 1e-24);
}

TEST_CASE("jacobian_adjoint is the exact transpose of the jacobian stencil") {
    const IVec3 dims{5, 6, 4};
    Rng rng(61);

    // random dL/dJ and random u; check <dLdJ, D u> == <D^T dLdJ, u>
    DisplacementField u(dims);
    for (Vec3& d : u.data) d = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    std::vector<Mat3> dldj(u.voxel_count());
    for (Mat3& m : dldj)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) m(i, j) = rng.uniform(-1, 1);

    const JacobianField J = jacobian(u);
    double lhs = 0.0;
    for (size_t i = 0; i < dldj.size(); ++i) {
        const Mat3 diff = J.data[i] - Mat3::identity();  // D u only
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) lhs += dldj[i](r, c) * diff(r, c);
    }
    const FieldGrad g = jacobian_adjoint(dldj, dims);
    const double rhs = test::dot_fields(g, u);
    CHECK(test::rel_err(lhs, rhs) < 1e-12);
}

TEST_CASE("field resampling rescales displacement vectors") {
    const IVec3 coarse{5, 5, 5};
    detail::FieldStorage f(coarse);
    for (Vec3& u : f.data) u = {1.0, 0.5, -2.0};  // constant displacement
    const detail::FieldStorage fine = resample_field(f, {9, 9, 9});
    for (const Vec3& u : fine.data) {
        CHECK(u.x == Catch::Approx(2.0));
        CHECK(u.y == Catch::Approx(1.0));
        CHECK(u.z == Catch::Approx(-4.0));
    }
}
