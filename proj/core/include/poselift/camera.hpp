#pragma once

#include <array>
#include <string>

#include "poselift/tensor.hpp"

namespace poselift {

/// Intrinsic + extrinsic camera description.
///
/// Conventions (used everywhere in the engine):
///  - the camera looks down +z; image x increases rightward, image y downward;
///  - world -> camera transform is p_cam = R(q) * (p_world - t), with q a unit
///    quaternion (w, x, y, z) and t the camera position in world coordinates;
///  - 3-D coordinates are millimeters, 2-D coordinates are pixels.
struct CameraModel {
    std::string name = "cam";
    float fx = 1000.0f, fy = 1000.0f; // focal length, px
    float cx = 500.0f, cy = 500.0f;   // principal point, px
    float k1 = 0.0f, k2 = 0.0f, k3 = 0.0f; // radial distortion
    float p1 = 0.0f, p2 = 0.0f;             // tangential distortion
    std::array<float, 4> rotation{1.0f, 0.0f, 0.0f, 0.0f}; // unit quaternion (w,x,y,z)
    std::array<float, 3> translation{0.0f, 0.0f, 0.0f};    // camera position, world mm
    float image_w = 1000.0f, image_h = 1000.0f;
    /// Ablation toggle: when false, project() ignores the distortion terms.
    bool use_distortion = true;

    void validate() const;

    /// Row-major 3x3 rotation matrix of `rotation`.
    std::array<double, 9> rotation_matrix() const;
};

/// p_cam = R * (p_world - t). `points` is [..., 3].
Tensor world_to_camera(const Tensor& points, const CameraModel& cam);

/// Inverse transform: p_world = R^T * p_cam + t.
Tensor camera_to_world(const Tensor& points, const CameraModel& cam);

/// Perspective projection with radial/tangential lens distortion.
/// For each camera-space point (x, y, z), z > 0:
///   x' = x/z, y' = y/z, r^2 = x'^2 + y'^2
///   radial = 1 + k1 r^2 + k2 r^4 + k3 r^6
///   tang_x = 2 p1 x' y' + p2 (r^2 + 2 x'^2)
///   tang_y = p1 (r^2 + 2 y'^2) + 2 p2 x' y'
///   u = fx (x' * radial + tang_x) + cx,  v = fy (y' * radial + tang_y) + cy
/// `points_cam` is [..., 3]; the result replaces the last dim by 2.
Tensor project(const Tensor& points_cam, const CameraModel& cam);

/// Gradient of a scalar sum-reduction downstream of project() with respect to
/// the camera-space points. `grad_out` is [..., 2].
Tensor project_backward(const Tensor& grad_out, const Tensor& points_cam, const CameraModel& cam);

} // namespace poselift
