#include "poselift/camera.hpp"

#include <cmath>

#include "poselift/errors.hpp"

namespace poselift {

void CameraModel::validate() const {
    if (!(fx > 0.0f) || !(fy > 0.0f))
        throw ConfigError("camera '" + name + "': focal length must be positive");
    const double n2 = static_cast<double>(rotation[0]) * rotation[0] +
                      static_cast<double>(rotation[1]) * rotation[1] +
                      static_cast<double>(rotation[2]) * rotation[2] +
                      static_cast<double>(rotation[3]) * rotation[3];
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-6)
        throw ConfigError("camera '" + name + "': rotation quaternion is not unit norm");
    if (!(image_w > 0.0f) || !(image_h > 0.0f))
        throw ConfigError("camera '" + name + "': image size must be positive");
}

std::array<double, 9> CameraModel::rotation_matrix() const {
    const double w = rotation[0], x = rotation[1], y = rotation[2], z = rotation[3];
    return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
            2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

namespace {

int64_t check_points(const Tensor& points, const char* what, int last_dim) {
    if (points.rank() < 1 || points.dim(points.rank() - 1) != last_dim)
        throw ShapeError(std::string(what) + ": points must be [...," + std::to_string(last_dim) +
                         "], got " + points.shape_str());
    return points.size() / last_dim;
}

} // namespace

Tensor world_to_camera(const Tensor& points, const CameraModel& cam) {
    const int64_t n = check_points(points, "world_to_camera", 3);
    const auto R = cam.rotation_matrix();
    Tensor out = points;
    const float* src = points.data();
    float* dst = out.data();
    for (int64_t i = 0; i < n; ++i) {
        const double px = static_cast<double>(src[3 * i + 0]) - cam.translation[0];
        const double py = static_cast<double>(src[3 * i + 1]) - cam.translation[1];
        const double pz = static_cast<double>(src[3 * i + 2]) - cam.translation[2];
        dst[3 * i + 0] = static_cast<float>(R[0] * px + R[1] * py + R[2] * pz);
        dst[3 * i + 1] = static_cast<float>(R[3] * px + R[4] * py + R[5] * pz);
        dst[3 * i + 2] = static_cast<float>(R[6] * px + R[7] * py + R[8] * pz);
    }
    return out;
}

Tensor camera_to_world(const Tensor& points, const CameraModel& cam) {
    const int64_t n = check_points(points, "camera_to_world", 3);
    const auto R = cam.rotation_matrix();
    Tensor out = points;
    const float* src = points.data();
    float* dst = out.data();
    for (int64_t i = 0; i < n; ++i) {
        const double px = src[3 * i + 0];
        const double py = src[3 * i + 1];
        const double pz = src[3 * i + 2];
        dst[3 * i + 0] = static_cast<float>(R[0] * px + R[3] * py + R[6] * pz + cam.translation[0]);
        dst[3 * i + 1] = static_cast<float>(R[1] * px + R[4] * py + R[7] * pz + cam.translation[1]);
        dst[3 * i + 2] = static_cast<float>(R[2] * px + R[5] * py + R[8] * pz + cam.translation[2]);
    }
    return out;
}

Tensor project(const Tensor& points_cam, const CameraModel& cam) {
    const int64_t n = check_points(points_cam, "project", 3);
    std::vector<int64_t> out_shape = points_cam.shape();
    out_shape.back() = 2;
    Tensor out(out_shape);
    const float* src = points_cam.data();
    float* dst = out.data();
    for (int64_t i = 0; i < n; ++i) {
        const double x = src[3 * i + 0];
        const double y = src[3 * i + 1];
        const double z = src[3 * i + 2];
        if (!(z > 0.0))
            throw NumericError("project: point " + std::to_string(i) + " behind camera (z=" +
                               std::to_string(z) + ")");
        const double xn = x / z;
        const double yn = y / z;
        double xd = xn, yd = yn;
        if (cam.use_distortion) {
            const double r2 = xn * xn + yn * yn;
            const double radial =
                1.0 + r2 * (cam.k1 + r2 * (cam.k2 + r2 * static_cast<double>(cam.k3)));
            xd = xn * radial + 2.0 * cam.p1 * xn * yn + cam.p2 * (r2 + 2.0 * xn * xn);
            yd = yn * radial + cam.p1 * (r2 + 2.0 * yn * yn) + 2.0 * cam.p2 * xn * yn;
        }
        dst[2 * i + 0] = static_cast<float>(cam.fx * xd + cam.cx);
        dst[2 * i + 1] = static_cast<float>(cam.fy * yd + cam.cy);
    }
    return out;
}

Tensor project_backward(const Tensor& grad_out, const Tensor& points_cam, const CameraModel& cam) {
    const int64_t n = check_points(points_cam, "project_backward", 3);
    check_points(grad_out, "project_backward(grad)", 2);
    if (grad_out.size() / 2 != n)
        throw ShapeError("project_backward: grad_out " + grad_out.shape_str() +
                         " does not pair with points " + points_cam.shape_str());
    Tensor g(points_cam.shape());
    const float* src = points_cam.data();
    const float* go = grad_out.data();
    float* dst = g.data();
    for (int64_t i = 0; i < n; ++i) {
        const double x = src[3 * i + 0];
        const double y = src[3 * i + 1];
        const double z = src[3 * i + 2];
        if (!(z > 0.0))
            throw NumericError("project_backward: point " + std::to_string(i) + " behind camera");
        const double xn = x / z;
        const double yn = y / z;

        // d(xd, yd)/d(xn, yn)
        double dxd_dxn = 1.0, dxd_dyn = 0.0, dyd_dxn = 0.0, dyd_dyn = 1.0;
        if (cam.use_distortion) {
            const double r2 = xn * xn + yn * yn;
            const double radial =
                1.0 + r2 * (cam.k1 + r2 * (cam.k2 + r2 * static_cast<double>(cam.k3)));
            const double dradial_dr2 = cam.k1 + r2 * (2.0 * cam.k2 + 3.0 * cam.k3 * r2);
            dxd_dxn = radial + xn * dradial_dr2 * 2.0 * xn + 2.0 * cam.p1 * yn + 6.0 * cam.p2 * xn;
            dxd_dyn = xn * dradial_dr2 * 2.0 * yn + 2.0 * cam.p1 * xn + 2.0 * cam.p2 * yn;
            dyd_dxn = yn * dradial_dr2 * 2.0 * xn + 2.0 * cam.p1 * xn + 2.0 * cam.p2 * yn;
            dyd_dyn = radial + yn * dradial_dr2 * 2.0 * yn + 6.0 * cam.p1 * yn + 2.0 * cam.p2 * xn;
        }

        const double gu = static_cast<double>(go[2 * i + 0]) * cam.fx;
        const double gv = static_cast<double>(go[2 * i + 1]) * cam.fy;
        const double gxn = gu * dxd_dxn + gv * dyd_dxn;
        const double gyn = gu * dxd_dyn + gv * dyd_dyn;

        dst[3 * i + 0] = static_cast<float>(gxn / z);
        dst[3 * i + 1] = static_cast<float>(gyn / z);
        dst[3 * i + 2] = static_cast<float>(-(gxn * xn + gyn * yn) / z);
    }
    return g;
}

} // namespace poselift
