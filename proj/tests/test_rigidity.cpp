#include <Eigen/Dense>
#include <catch2/catch_amalgamated.hpp>

#include "rigidreg/rigidity.hpp"
#include "test_helpers.hpp"

using namespace rigidreg;

namespace {

// Independent rigid-fit oracle: Horn's closed-form quaternion method. Shares
// no code with the SVD path under test.
double horn_rigid_residual(const std::vector<Vec3>& p, const std::vector<Vec3>& q) {
    const size_t n = p.size();
    Vec3 pb{0, 0, 0}, qb{0, 0, 0};
    for (size_t i = 0; i < n; ++i) {
        pb += p[i];
        qb += q[i];
    }
    pb = pb / double(n);
    qb = qb / double(n);

    Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
    for (size_t i = 0; i < n; ++i) {
        const Vec3 a = p[i] - pb, b = q[i] - qb;
        Eigen::Vector3d ae(a.x, a.y, a.z), be(b.x, b.y, b.z);
        s += ae * be.transpose();
    }
    Eigen::Matrix4d nm;
    nm << s(0, 0) + s(1, 1) + s(2, 2), s(1, 2) - s(2, 1), s(2, 0) - s(0, 2), s(0, 1) - s(1, 0),
        s(1, 2) - s(2, 1), s(0, 0) - s(1, 1) - s(2, 2), s(0, 1) + s(1, 0), s(2, 0) + s(0, 2),
        s(2, 0) - s(0, 2), s(0, 1) + s(1, 0), s(1, 1) - s(0, 0) - s(2, 2), s(1, 2) + s(2, 1),
        s(0, 1) - s(1, 0), s(2, 0) + s(0, 2), s(1, 2) + s(2, 1), s(2, 2) - s(0, 0) - s(1, 1);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(nm);
    const Eigen::Vector4d qv = eig.eigenvectors().col(3);  // largest eigenvalue
    const double w = qv(0), x = qv(1), y = qv(2), z = qv(3);
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);

    double res = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const Vec3 a = p[i] - pb;
        Eigen::Vector3d ra = r * Eigen::Vector3d(a.x, a.y, a.z);
        const Vec3 want = q[i] - qb;
        res += (ra - Eigen::Vector3d(want.x, want.y, want.z)).squaredNorm();
    }
    return res / double(n);
}

double rotation_diff(const Mat3& a, const Mat3& b) {
    return std::sqrt((a - b).frobenius_norm2());
}

DisplacementField shear_field(IVec3 dims, double s) {
    DisplacementField phi(dims);
    for (int z = 0; z < dims.z; ++z)
        for (int y = 0; y < dims.y; ++y)
            for (int x = 0; x < dims.x; ++x) phi.at(x, y, z) = {s * y, 0, 0};
    return phi;
}

// phi that scales the warped body volume by factor^3: coordinates contract
// about the center by 1/factor.
DisplacementField body_scale_field(IVec3 dims, Vec3 center, double factor) {
    DisplacementField phi(dims);
    for (int z = 0; z < dims.z; ++z)
        for (int y = 0; y < dims.y; ++y)
            for (int x = 0; x < dims.x; ++x) {
                const Vec3 p{double(x), double(y), double(z)};
                phi.at(x, y, z) = center + (p - center) / factor - p;
            }
    return phi;
}

}  // namespace

TEST_CASE("fit_rigid: exact data, reflections, degeneracy") {
    SECTION("Q = P gives the identity") {
        PointCorrespondences c;
        c.source = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}};
        c.target = c.source;
        const RigidTransform t = fit_rigid(c);
        CHECK(rotation_diff(t.rotation, Mat3::identity()) < 1e-12);
        CHECK(norm(t.translation) < 1e-12);
    }

    SECTION("recovers a 90-degree z rotation") {
        const Mat3 rz = rotation_about_axis({0, 0, 1}, M_PI / 2);
        PointCorrespondences c;
        c.source = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}};
        for (const Vec3& p : c.source) c.target.push_back(rz * p);
        const RigidTransform t = fit_rigid(c);
        CHECK(rotation_diff(t.rotation, rz) < 1e-9);
        CHECK(norm(t.translation_about_origin()) < 1e-9);
        double res = 0.0;
        for (size_t i = 0; i < c.source.size(); ++i)
            res += norm2(t.apply(c.source[i]) - c.target[i]);
        CHECK(res < 1e-18);
    }

    SECTION("mirrored targets still produce a proper rotation") {
        PointCorrespondences c;
        c.source = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {0.3, 0.4, 0.5}};
        for (Vec3 p : c.source) {
            p.x = -p.x;
            c.target.push_back(p);
        }
        const RigidTransform t = fit_rigid(c);
        CHECK(t.rotation.det() == Catch::Approx(1.0).margin(1e-9));
        double res = 0.0;
        for (size_t i = 0; i < c.source.size(); ++i)
            res += norm2(t.apply(c.source[i]) - c.target[i]);
        CHECK(res > 1e-3);  // reflections cannot be represented
    }

    SECTION("collinear or undersized inputs are rejected") {
        PointCorrespondences c;
        c.source = {{0, 0, 0}, {1, 1, 1}};
        c.target = c.source;
        CHECK_THROWS_AS(fit_rigid(c), DegenerateGeometry);
        c.source = {{0, 0, 0}, {1, 1, 1}, {2, 2, 2}, {3, 3, 3}};
        c.target = c.source;
        CHECK_THROWS_AS(fit_rigid(c), DegenerateGeometry);
    }

    SECTION("random rigid motions are recovered to 1e-9") {
        Rng rng(131);
        for (int trial = 0; trial < 50; ++trial) {
            const Mat3 r = rotation_about_axis(rng.unit_vector(), rng.uniform(-M_PI, M_PI));
            const Vec3 tr{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
            PointCorrespondences c;
            const int n = 4 + static_cast<int>(rng.uniform(0, 8));
            for (int i = 0; i < n; ++i)
                c.source.push_back(
                    {rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)});
            for (const Vec3& p : c.source) c.target.push_back(r * p + tr);
            const RigidTransform t = fit_rigid(c);
            CHECK(rotation_diff(t.rotation, r) < 1e-9);
            CHECK(norm(t.translation_about_origin() - tr) < 1e-9);
        }
    }
}

TEST_CASE("closest_rigid_of_body recovers global rigid motions") {
    const IVec3 dims{16, 16, 16};
    const LabelVolume labels = test::make_cube_labels(dims, 8);
    const Vec3 c = test::cube_centroid(labels, 1);

    SECTION("identity") {
        DisplacementField id(dims);
        const RigidTransform t = closest_rigid_of_body(labels, 1, id);
        CHECK(rotation_diff(t.rotation, Mat3::identity()) < 1e-12);
        CHECK(norm(t.translation) < 1e-12);
    }

    SECTION("5-degree rotation about the centroid") {
        RigidTransform motion;
        motion.rotation = rotation_about_axis({0, 0, 1}, 5.0 * M_PI / 180.0);
        motion.center = c;
        motion.translation = {0.5, -0.25, 0.75};
        const DisplacementField phi = test::rigid_motion_field(dims, motion);
        const RigidTransform t = closest_rigid_of_body(labels, 1, phi);
        CHECK(rotation_diff(t.rotation, motion.rotation) < 1e-3);
        CHECK(norm(t.apply(c) - motion.apply(c)) < 1e-3);
    }

    SECTION("sample caps keep the fit deterministic and close") {
        RigidTransform motion;
        motion.rotation = rotation_about_axis({1, 0, 0}, 0.05);
        motion.center = c;
        const DisplacementField phi = test::rigid_motion_field(dims, motion);
        const RigidTransform a = closest_rigid_of_body(labels, 1, phi, 100);
        const RigidTransform b = closest_rigid_of_body(labels, 1, phi, 100);
        CHECK(rotation_diff(a.rotation, b.rotation) == 0.0);
        CHECK(rotation_diff(a.rotation, motion.rotation) < 1e-6);
    }

    SECTION("shear residual matches the quaternion oracle") {
        const DisplacementField phi = shear_field(dims, 0.1);
        const detail::BodySupport sup = detail::body_support(labels, 1, phi);
        std::vector<Vec3> p, q;
        for (const IVec3& v : sup.voxels) {
            p.push_back({double(v.x), double(v.y), double(v.z)});
            q.push_back(phi.map(v.x, v.y, v.z));
        }
        const RigidTransform t = closest_rigid_of_body(labels, 1, phi);
        double res = 0.0;
        for (size_t i = 0; i < p.size(); ++i) res += norm2(t.apply(p[i]) - q[i]);
        res /= double(p.size());
        CHECK(res == Catch::Approx(horn_rigid_residual(p, q)).epsilon(1e-9));
        CHECK(res > 1e-4);
    }

    SECTION("unknown body") {
        DisplacementField id(dims);
        CHECK_THROWS_AS(closest_rigid_of_body(labels, 3, id), UnknownBody);
    }
}

TEST_CASE("rigid_dice_loss: rigid fields score ~0, scaling scores high") {
    const IVec3 dims{20, 20, 20};
    const LabelVolume labels = test::make_cube_labels(dims, 12);
    const Vec3 c = test::cube_centroid(labels, 1);

    SECTION("exactly rigid motion, including rotation") {
        RigidTransform motion;
        motion.rotation = rotation_about_axis({0.2, 1, -0.3}, 4.0 * M_PI / 180.0);
        motion.center = c;
        motion.translation = {0.6, 0.3, -0.4};
        const DisplacementField phi = test::rigid_motion_field(dims, motion);
        CHECK(rigid_dice_loss(labels, 1, phi).loss < 1e-3);
    }

    SECTION("1.3 scaling about the centroid") {
        const DisplacementField phi = body_scale_field(dims, c, 1.3);
        CHECK(rigid_dice_loss(labels, 1, phi).loss > 0.1);
    }

    SECTION("loss stays within [0, 1] for random fields") {
        Rng rng(137);
        for (int trial = 0; trial < 5; ++trial) {
            DisplacementField phi(dims);
            for (Vec3& u : phi.data)
                u = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
            const double l = rigid_dice_loss(labels, 1, phi).loss;
            CHECK(l >= 0.0);
            CHECK(l <= 1.0);
        }
    }

    SECTION("gradient passes a finite-difference check with the fit frozen") {
        Rng rng(139);
        const VelocityField smooth = test::make_smooth_field(dims, rng, 0.8);
        DisplacementField phi(dims);
        phi.data = smooth.data;
        const RigidTransform frozen = closest_rigid_of_body(labels, 1, phi);

        const BodyLoss r = rigid_dice_loss(labels, 1, phi, &frozen);
        DisplacementField dir(dims);
        for (Vec3& u : dir.data)
            u = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const double h = 1e-5;
        DisplacementField pp = phi, pm = phi;
        for (size_t i = 0; i < phi.data.size(); ++i) {
            pp.data[i] += dir.data[i] * h;
            pm.data[i] -= dir.data[i] * h;
        }
        const double fd = (rigid_dice_loss(labels, 1, pp, &frozen).loss -
                           rigid_dice_loss(labels, 1, pm, &frozen).loss) /
                          (2 * h);
        CHECK(test::rel_err(test::dot_fields(r.grad, dir), fd) < 1e-2);
    }
}

TEST_CASE("rigid_field_loss: nullspace, shear oracle, rigid composition") {
    const IVec3 dims{16, 16, 16};
    const LabelVolume labels = test::make_cube_labels(dims, 8);
    const Vec3 c = test::cube_centroid(labels, 1);

    SECTION("rigid motions give ~0") {
        RigidTransform motion;
        motion.rotation = rotation_about_axis({0, 1, 0}, 3.0 * M_PI / 180.0);
        motion.center = c;
        motion.translation = {1.2, -0.7, 0.4};
        const DisplacementField phi = test::rigid_motion_field(dims, motion);
        CHECK(rigid_field_loss(labels, 1, phi).loss < 1e-6);
    }

    SECTION("shear loss equals the independent oracle residual") {
        const DisplacementField phi = shear_field(dims, 0.08);
        const detail::BodySupport sup = detail::body_support(labels, 1, phi);
        std::vector<Vec3> p, q;
        for (const IVec3& v : sup.voxels) {
            p.push_back({double(v.x), double(v.y), double(v.z)});
            q.push_back(phi.map(v.x, v.y, v.z));
        }
        const double loss = rigid_field_loss(labels, 1, phi).loss;
        CHECK(loss == Catch::Approx(horn_rigid_residual(p, q)).epsilon(1e-9));
    }

    SECTION("residual is invariant under a global rigid composition") {
        // stated at the point-set level, where it is literally true
        const DisplacementField phi = shear_field(dims, 0.08);
        const detail::BodySupport sup = detail::body_support(labels, 1, phi);
        PointCorrespondences c1, c2;
        RigidTransform g;
        g.rotation = rotation_about_axis({0.5, -0.5, 0.7}, 0.3);
        g.center = {8, 8, 8};
        g.translation = {2, -1, 3};
        for (const IVec3& v : sup.voxels) {
            const Vec3 src{double(v.x), double(v.y), double(v.z)};
            const Vec3 tgt = phi.map(v.x, v.y, v.z);
            c1.source.push_back(src);
            c1.target.push_back(tgt);
            c2.source.push_back(src);
            c2.target.push_back(g.apply(tgt));
        }
        auto residual = [](const PointCorrespondences& c) {
            const RigidTransform t = fit_rigid(c);
            double r = 0.0;
            for (size_t i = 0; i < c.source.size(); ++i)
                r += norm2(t.apply(c.source[i]) - c.target[i]);
            return r / double(c.source.size());
        };
        CHECK(std::fabs(residual(c1) - residual(c2)) < 1e-6);
    }

    SECTION("gradient passes a finite-difference check with the fit frozen") {
        Rng rng(149);
        const VelocityField smooth = test::make_smooth_field(dims, rng, 0.6);
        DisplacementField phi(dims);
        phi.data = smooth.data;
        const RigidTransform frozen = closest_rigid_of_body(labels, 1, phi);

        const BodyLoss r = rigid_field_loss(labels, 1, phi, &frozen);
        DisplacementField dir(dims);
        for (Vec3& u : dir.data)
            u = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const double h = 1e-5;
        DisplacementField pp = phi, pm = phi;
        for (size_t i = 0; i < phi.data.size(); ++i) {
            pp.data[i] += dir.data[i] * h;
            pm.data[i] -= dir.data[i] * h;
        }
        const double fd = (rigid_field_loss(labels, 1, pp, &frozen).loss -
                           rigid_field_loss(labels, 1, pm, &frozen).loss) /
                          (2 * h);
        CHECK(test::rel_err(test::dot_fields(r.grad, dir), fd) < 1e-2);
    }
}

TEST_CASE("pc_loss and oc_loss: analytic values and separation") {
    const IVec3 dims{16, 16, 16};
    const LabelVolume labels = test::make_cube_labels(dims, 8);

    SECTION("identity and rigid rotations vanish") {
        DisplacementField id(dims);
        CHECK(pc_loss(labels, id).loss == 0.0);
        CHECK(oc_loss(labels, id).loss == 0.0);

        RigidTransform motion;
        motion.rotation = rotation_about_axis({0.3, 0.2, 0.9}, 0.25);
        motion.center = {7.5, 7.5, 7.5};
        const DisplacementField rot = test::rigid_motion_field(dims, motion);
        CHECK(pc_loss(labels, rot).loss < 1e-9);
        CHECK(oc_loss(labels, rot).loss < 1e-9);
    }

    SECTION("uniform 1.1 scaling hits the analytic values") {
        const DisplacementField phi =
            test::affine_field(dims, Mat3::identity() * 1.1, {0, 0, 0});
        CHECK(pc_loss(labels, phi).loss == Catch::Approx(0.109561).epsilon(1e-9));
        CHECK(oc_loss(labels, phi).loss == Catch::Approx(3 * 0.21 * 0.21).epsilon(1e-9));
    }

    SECTION("unit-determinant shear separates the two penalties") {
        const DisplacementField phi = shear_field(dims, 0.2);
        CHECK(pc_loss(labels, phi).loss < 1e-12);
        CHECK(oc_loss(labels, phi).loss > 0.05);
    }

    SECTION("gradients pass finite-difference checks at 1e-3") {
        Rng rng(151);
        const VelocityField smooth = test::make_smooth_field(dims, rng, 0.5);
        DisplacementField phi(dims);
        phi.data = smooth.data;
        DisplacementField dir(dims);
        for (Vec3& u : dir.data)
            u = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};

        for (int which = 0; which < 2; ++which) {
            auto loss_of = [&](const DisplacementField& f) {
                return which == 0 ? pc_loss(labels, f).loss : oc_loss(labels, f).loss;
            };
            const BodyLoss r = which == 0 ? pc_loss(labels, phi) : oc_loss(labels, phi);
            const double h = 1e-5;
            DisplacementField pp = phi, pm = phi;
            for (size_t i = 0; i < phi.data.size(); ++i) {
                pp.data[i] += dir.data[i] * h;
                pm.data[i] -= dir.data[i] * h;
            }
            const double fd = (loss_of(pp) - loss_of(pm)) / (2 * h);
            CHECK(test::rel_err(test::dot_fields(r.grad, dir), fd) < 1e-3);
        }
    }
}

TEST_CASE("volume_loss: soft-count oracle and invariances") {
    const IVec3 dims{20, 20, 20};
    const LabelVolume labels = test::make_cube_labels(dims, 12);
    const Vec3 c = test::cube_centroid(labels, 1);

    SECTION("identity gives zero") {
        DisplacementField id(dims);
        CHECK(volume_loss(labels, id).loss == 0.0);
    }

    SECTION("1.1 scaling about the centroid matches the soft-count oracle") {
        const DisplacementField phi = body_scale_field(dims, c, 1.1);
        // independent soft-count oracle: sample the indicator directly
        const Volume ind = indicator(labels, 1);
        double soft = 0.0, source = 0.0;
        for (int z = 0; z < dims.z; ++z)
            for (int y = 0; y < dims.y; ++y)
                for (int x = 0; x < dims.x; ++x) {
                    soft += sample_trilinear(ind, phi.map(x, y, z));
                    source += ind.at(x, y, z);
                }
        const double rel = (soft - source) / source;
        const double loss = volume_loss(labels, phi).loss;
        CHECK(loss == Catch::Approx(rel * rel).epsilon(1e-12));
        CHECK(loss == Catch::Approx(0.1096).margin(0.012));  // ~ (1.331-1)^2
    }

    SECTION("translations preserve the soft count") {
        DisplacementField t(dims);
        for (Vec3& u : t.data) u = {0.6, -0.4, 0.2};
        CHECK(volume_loss(labels, t).loss < 1e-3);
    }

    SECTION("gradient passes a finite-difference check") {
        Rng rng(157);
        const VelocityField smooth = test::make_smooth_field(dims, rng, 0.6);
        DisplacementField phi(dims);
        phi.data = smooth.data;

        const BodyLoss r = volume_loss(labels, phi);
        DisplacementField dir(dims);
        for (Vec3& u : dir.data)
            u = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const double h = 1e-5;
        DisplacementField pp = phi, pm = phi;
        for (size_t i = 0; i < phi.data.size(); ++i) {
            pp.data[i] += dir.data[i] * h;
            pm.data[i] -= dir.data[i] * h;
        }
        const double fd =
            (volume_loss(labels, pp).loss - volume_loss(labels, pm).loss) / (2 * h);
        CHECK(test::rel_err(test::dot_fields(r.grad, dir), fd) < 1e-2);
    }
}

TEST_CASE("rigidity nullspace: one global rigid motion satisfies every penalty") {
    const IVec3 dims{18, 18, 18};
    LabelVolume labels(dims);
    // two separated bodies
    for (int z = 3; z < 8; ++z)
        for (int y = 5; y < 12; ++y)
            for (int x = 5; x < 12; ++x) labels.at(x, y, z) = 1;
    for (int z = 11; z < 16; ++z)
        for (int y = 5; y < 12; ++y)
            for (int x = 5; x < 12; ++x) labels.at(x, y, z) = 2;
    labels.refresh_body_ids();

    RigidTransform motion;
    motion.rotation = rotation_about_axis({0.1, 0.9, 0.2}, 2.5 * M_PI / 180.0);
    motion.center = {8.5, 8.5, 8.5};
    motion.translation = {0.8, 0.5, -0.6};
    const DisplacementField phi = test::rigid_motion_field(dims, motion);

    CHECK(rigid_field_loss(labels, 1, phi).loss < 1e-6);
    CHECK(rigid_field_loss(labels, 2, phi).loss < 1e-6);
    CHECK(rigid_dice_loss(labels, 1, phi).loss < 1e-2);
    CHECK(rigid_dice_loss(labels, 2, phi).loss < 1e-2);
    CHECK(pc_loss(labels, phi).loss < 1e-6);
    CHECK(oc_loss(labels, phi).loss < 1e-6);
    CHECK(volume_loss(labels, phi).loss < 1e-3);
}
