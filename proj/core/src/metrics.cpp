#include "poselift/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace poselift {

int Skeleton::root() const {
    for (int j = 0; j < num_joints(); ++j)
        if (parent[static_cast<size_t>(j)] == j) return j;
    throw ConfigError("skeleton: no root joint (parent[j] == j) found");
}

std::vector<int> Skeleton::bone_children() const {
    std::vector<int> out;
    for (int j = 0; j < num_joints(); ++j)
        if (parent[static_cast<size_t>(j)] != j) out.push_back(j);
    return out;
}

void Skeleton::validate() const {
    const int J = num_joints();
    if (J < 1) throw ConfigError("skeleton: empty");
    if (!joint_names.empty() && static_cast<int>(joint_names.size()) != J)
        throw ConfigError("skeleton: joint_names size does not match parent array");
    int roots = 0;
    for (int j = 0; j < J; ++j) {
        const int p = parent[static_cast<size_t>(j)];
        if (p < 0 || p >= J)
            throw ConfigError("skeleton: parent index of joint " + std::to_string(j) +
                              " out of range");
        if (p == j) ++roots;
        // Walking to the root must terminate within J steps.
        int cur = j;
        for (int steps = 0; parent[static_cast<size_t>(cur)] != cur; ++steps) {
            if (steps > J) throw ConfigError("skeleton: cycle through joint " + std::to_string(j));
            cur = parent[static_cast<size_t>(cur)];
        }
    }
    if (roots != 1)
        throw ConfigError("skeleton: expected exactly one root, found " + std::to_string(roots));
    std::vector<bool> seen(static_cast<size_t>(J), false);
    for (const auto& [l, r] : left_right_pairs) {
        if (l < 0 || l >= J || r < 0 || r >= J || l == r)
            throw ConfigError("skeleton: invalid left/right pair (" + std::to_string(l) + "," +
                              std::to_string(r) + ")");
        if (seen[static_cast<size_t>(l)] || seen[static_cast<size_t>(r)])
            throw ConfigError("skeleton: joint appears in more than one left/right pair");
        seen[static_cast<size_t>(l)] = seen[static_cast<size_t>(r)] = true;
    }
}

Skeleton h36m_skeleton() {
    Skeleton s;
    s.joint_names = {"hip",   "rhip",      "rknee",  "rankle", "lhip",      "lknee",
                     "lankle", "spine",    "thorax", "neck",   "head",      "lshoulder",
                     "lelbow", "lwrist",   "rshoulder", "relbow", "rwrist"};
    s.parent = {0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};
    s.left_right_pairs = {{4, 1}, {5, 2}, {6, 3}, {11, 14}, {12, 15}, {13, 16}};
    s.validate();
    return s;
}

namespace {

void check_pose_pair(const Tensor& pred, const Tensor& gt, int d, const char* what) {
    if (pred.rank() != 3 || pred.dim(2) != d)
        throw ShapeError(std::string(what) + ": expected [T,J," + std::to_string(d) + "], got " +
                         pred.shape_str());
    if (!pred.same_shape(gt))
        throw ShapeError(std::string(what) + ": shape mismatch " + pred.shape_str() + " vs " +
                         gt.shape_str());
}

/// Largest-eigenvalue eigenvector of a symmetric 4x4 matrix (cyclic Jacobi).
std::array<double, 4> max_eigenvector4(std::array<std::array<double, 4>, 4> a) {
    std::array<std::array<double, 4>, 4> v{{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}};
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < 4; ++p)
            for (int q = p + 1; q < 4; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-26) break;
        for (int p = 0; p < 4; ++p) {
            for (int q = p + 1; q < 4; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < 4; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (int k = 0; k < 4; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (int k = 0; k < 4; ++k) {
                    const double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    int best = 0;
    for (int i = 1; i < 4; ++i)
        if (a[i][i] > a[best][best]) best = i;
    return {v[0][best], v[1][best], v[2][best], v[3][best]};
}

std::array<double, 9> quat_to_matrix(const std::array<double, 4>& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
            2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

/// Horn's closed-form absolute orientation: the proper rotation R maximizing
/// sum_i y_i . (R x_i) for centered point sets x, y.
std::array<double, 9> horn_rotation(const std::array<double, 9>& S) {
    const double sxx = S[0], sxy = S[1], sxz = S[2];
    const double syx = S[3], syy = S[4], syz = S[5];
    const double szx = S[6], szy = S[7], szz = S[8];
    std::array<std::array<double, 4>, 4> N{{
        {sxx + syy + szz, syz - szy, szx - sxz, sxy - syx},
        {syz - szy, sxx - syy - szz, sxy + syx, szx + sxz},
        {szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy},
        {sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz},
    }};
    return quat_to_matrix(max_eigenvector4(N));
}

} // namespace

double mpjpe(const Tensor& pred, const Tensor& gt) {
    check_pose_pair(pred, gt, 3, "mpjpe");
    const int64_t n = pred.size() / 3;
    const float* p = pred.data();
    const float* g = gt.data();
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double dx = static_cast<double>(p[3 * i + 0]) - g[3 * i + 0];
        const double dy = static_cast<double>(p[3 * i + 1]) - g[3 * i + 1];
        const double dz = static_cast<double>(p[3 * i + 2]) - g[3 * i + 2];
        sum += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    return sum / static_cast<double>(n);
}

Tensor mpjpe_backward(const Tensor& pred, const Tensor& gt) {
    check_pose_pair(pred, gt, 3, "mpjpe_backward");
    const int64_t n = pred.size() / 3;
    Tensor grad(pred.shape());
    const float* p = pred.data();
    const float* g = gt.data();
    float* gp = grad.data();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
        const double dx = static_cast<double>(p[3 * i + 0]) - g[3 * i + 0];
        const double dy = static_cast<double>(p[3 * i + 1]) - g[3 * i + 1];
        const double dz = static_cast<double>(p[3 * i + 2]) - g[3 * i + 2];
        const double norm = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (norm > 1e-12) {
            const double s = inv_n / norm;
            gp[3 * i + 0] = static_cast<float>(dx * s);
            gp[3 * i + 1] = static_cast<float>(dy * s);
            gp[3 * i + 2] = static_cast<float>(dz * s);
        }
    }
    return grad;
}

double p_mpjpe(const Tensor& pred, const Tensor& gt) {
    check_pose_pair(pred, gt, 3, "p_mpjpe");
    const int64_t T = pred.dim(0), J = pred.dim(1);
    if (J < 3) throw ShapeError("p_mpjpe: needs at least 3 joints per frame");
    double total = 0.0;
    for (int64_t t = 0; t < T; ++t) {
        std::array<double, 3> mp{0, 0, 0}, mg{0, 0, 0};
        for (int64_t j = 0; j < J; ++j)
            for (int d = 0; d < 3; ++d) {
                mp[d] += pred(t, j, d);
                mg[d] += gt(t, j, d);
            }
        for (int d = 0; d < 3; ++d) {
            mp[d] /= static_cast<double>(J);
            mg[d] /= static_cast<double>(J);
        }
        std::array<double, 9> S{0, 0, 0, 0, 0, 0, 0, 0, 0};
        double sum_xx = 0.0;
        for (int64_t j = 0; j < J; ++j) {
            const double x0 = pred(t, j, 0) - mp[0], x1 = pred(t, j, 1) - mp[1],
                         x2 = pred(t, j, 2) - mp[2];
            const double y0 = gt(t, j, 0) - mg[0], y1 = gt(t, j, 1) - mg[1],
                         y2 = gt(t, j, 2) - mg[2];
            sum_xx += x0 * x0 + x1 * x1 + x2 * x2;
            S[0] += x0 * y0; S[1] += x0 * y1; S[2] += x0 * y2;
            S[3] += x1 * y0; S[4] += x1 * y1; S[5] += x1 * y2;
            S[6] += x2 * y0; S[7] += x2 * y1; S[8] += x2 * y2;
        }
        if (sum_xx < 1e-12)
            throw NumericError("p_mpjpe: degenerate frame " + std::to_string(t) +
                               " (all predicted joints coincident)");
        const auto R = horn_rotation(S);
        // Optimal uniform scale for || s R x - y ||^2.
        double num = 0.0;
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) num += R[3 * a + b] * S[3 * b + a];
        const double s = num / sum_xx;
        double frame_err = 0.0;
        for (int64_t j = 0; j < J; ++j) {
            const double x0 = pred(t, j, 0) - mp[0], x1 = pred(t, j, 1) - mp[1],
                         x2 = pred(t, j, 2) - mp[2];
            const double ax = s * (R[0] * x0 + R[1] * x1 + R[2] * x2) + mg[0];
            const double ay = s * (R[3] * x0 + R[4] * x1 + R[5] * x2) + mg[1];
            const double az = s * (R[6] * x0 + R[7] * x1 + R[8] * x2) + mg[2];
            const double dx = ax - gt(t, j, 0), dy = ay - gt(t, j, 1), dz = az - gt(t, j, 2);
            frame_err += std::sqrt(dx * dx + dy * dy + dz * dz);
        }
        total += frame_err / static_cast<double>(J);
    }
    return total / static_cast<double>(T);
}

double n_mpjpe(const Tensor& pred, const Tensor& gt) {
    check_pose_pair(pred, gt, 3, "n_mpjpe");
    const int64_t T = pred.dim(0), J = pred.dim(1);
    double total = 0.0;
    for (int64_t t = 0; t < T; ++t) {
        double dot = 0.0, pp = 0.0;
        for (int64_t j = 0; j < J; ++j)
            for (int d = 0; d < 3; ++d) {
                dot += static_cast<double>(pred(t, j, d)) * gt(t, j, d);
                pp += static_cast<double>(pred(t, j, d)) * pred(t, j, d);
            }
        if (pp < 1e-12)
            throw NumericError("n_mpjpe: zero-norm prediction frame " + std::to_string(t));
        const double s = dot / pp;
        double frame_err = 0.0;
        for (int64_t j = 0; j < J; ++j) {
            const double dx = s * pred(t, j, 0) - gt(t, j, 0);
            const double dy = s * pred(t, j, 1) - gt(t, j, 1);
            const double dz = s * pred(t, j, 2) - gt(t, j, 2);
            frame_err += std::sqrt(dx * dx + dy * dy + dz * dz);
        }
        total += frame_err / static_cast<double>(J);
    }
    return total / static_cast<double>(T);
}

double mpjve(const Tensor& pred, const Tensor& gt, double /*fps*/) {
    check_pose_pair(pred, gt, 3, "mpjve");
    const int64_t T = pred.dim(0), J = pred.dim(1);
    if (T < 2) throw ShapeError("mpjve: needs at least 2 frames, got " + std::to_string(T));
    double sum = 0.0;
    for (int64_t t = 0; t + 1 < T; ++t) {
        for (int64_t j = 0; j < J; ++j) {
            double d2 = 0.0;
            for (int d = 0; d < 3; ++d) {
                const double vp = static_cast<double>(pred(t + 1, j, d)) - pred(t, j, d);
                const double vg = static_cast<double>(gt(t + 1, j, d)) - gt(t, j, d);
                d2 += (vp - vg) * (vp - vg);
            }
            sum += std::sqrt(d2);
        }
    }
    return sum / static_cast<double>((T - 1) * J);
}

namespace {

void check_traj_pair(const Tensor& pred, const Tensor& gt, const char* what) {
    if (pred.rank() != 2 || pred.dim(1) != 3)
        throw ShapeError(std::string(what) + ": expected [T,3], got " + pred.shape_str());
    if (!pred.same_shape(gt))
        throw ShapeError(std::string(what) + ": shape mismatch " + pred.shape_str() + " vs " +
                         gt.shape_str());
}

} // namespace

double wmpjpe(const Tensor& pred_traj, const Tensor& gt_traj) {
    check_traj_pair(pred_traj, gt_traj, "wmpjpe");
    const int64_t T = pred_traj.dim(0);
    double sum = 0.0;
    for (int64_t t = 0; t < T; ++t) {
        const double z = gt_traj(t, 2);
        if (!(z > 0.0))
            throw NumericError("wmpjpe: non-positive ground-truth depth at frame " +
                               std::to_string(t));
        double d2 = 0.0;
        for (int d = 0; d < 3; ++d) {
            const double e = static_cast<double>(pred_traj(t, d)) - gt_traj(t, d);
            d2 += e * e;
        }
        sum += std::sqrt(d2) / z;
    }
    return sum / static_cast<double>(T);
}

Tensor wmpjpe_backward(const Tensor& pred_traj, const Tensor& gt_traj) {
    check_traj_pair(pred_traj, gt_traj, "wmpjpe_backward");
    const int64_t T = pred_traj.dim(0);
    Tensor grad(pred_traj.shape());
    for (int64_t t = 0; t < T; ++t) {
        const double z = gt_traj(t, 2);
        if (!(z > 0.0))
            throw NumericError("wmpjpe_backward: non-positive ground-truth depth at frame " +
                               std::to_string(t));
        double d2 = 0.0;
        for (int d = 0; d < 3; ++d) {
            const double e = static_cast<double>(pred_traj(t, d)) - gt_traj(t, d);
            d2 += e * e;
        }
        const double norm = std::sqrt(d2);
        if (norm > 1e-12) {
            const double s = 1.0 / (norm * z * static_cast<double>(T));
            for (int d = 0; d < 3; ++d)
                grad(t, d) =
                    static_cast<float>((static_cast<double>(pred_traj(t, d)) - gt_traj(t, d)) * s);
        }
    }
    return grad;
}

Tensor bone_lengths(const Tensor& pose, const Skeleton& skeleton) {
    if (pose.rank() != 2 || pose.dim(1) != 3 || pose.dim(0) != skeleton.num_joints())
        throw ShapeError("bone_lengths: expected pose [" + std::to_string(skeleton.num_joints()) +
                         ",3], got " + pose.shape_str());
    const auto children = skeleton.bone_children();
    Tensor out({static_cast<int64_t>(children.size())});
    for (size_t b = 0; b < children.size(); ++b) {
        const int j = children[b];
        const int p = skeleton.parent[static_cast<size_t>(j)];
        double d2 = 0.0;
        for (int d = 0; d < 3; ++d) {
            const double e = static_cast<double>(pose(j, d)) - pose(p, d);
            d2 += e * e;
        }
        out[static_cast<int64_t>(b)] = static_cast<float>(std::sqrt(d2));
    }
    return out;
}

namespace {

void check_batch(const Tensor& batch, const Skeleton& sk, const char* what) {
    if (batch.rank() != 3 || batch.dim(1) != sk.num_joints() || batch.dim(2) != 3)
        throw ShapeError(std::string(what) + ": expected [N," + std::to_string(sk.num_joints()) +
                         ",3], got " + batch.shape_str());
}

std::vector<double> mean_bone_lengths(const Tensor& batch, const Skeleton& sk) {
    const auto children = sk.bone_children();
    std::vector<double> mean(children.size(), 0.0);
    const int64_t N = batch.dim(0);
    for (int64_t n = 0; n < N; ++n) {
        for (size_t b = 0; b < children.size(); ++b) {
            const int j = children[b];
            const int p = sk.parent[static_cast<size_t>(j)];
            double d2 = 0.0;
            for (int d = 0; d < 3; ++d) {
                const double e = static_cast<double>(batch(n, j, d)) - batch(n, p, d);
                d2 += e * e;
            }
            mean[b] += std::sqrt(d2);
        }
    }
    for (double& v : mean) v /= static_cast<double>(N);
    return mean;
}

} // namespace

double bone_length_loss(const Tensor& unlabeled_batch, const Tensor& labeled_batch,
                        const Skeleton& skeleton) {
    check_batch(unlabeled_batch, skeleton, "bone_length_loss(unlabeled)");
    check_batch(labeled_batch, skeleton, "bone_length_loss(labeled)");
    const auto mu = mean_bone_lengths(unlabeled_batch, skeleton);
    const auto ml = mean_bone_lengths(labeled_batch, skeleton);
    double loss = 0.0;
    for (size_t b = 0; b < mu.size(); ++b) loss += (mu[b] - ml[b]) * (mu[b] - ml[b]);
    return loss;
}

Tensor bone_length_loss_backward(const Tensor& unlabeled_batch, const Tensor& labeled_batch,
                                 const Skeleton& skeleton) {
    check_batch(unlabeled_batch, skeleton, "bone_length_loss_backward(unlabeled)");
    check_batch(labeled_batch, skeleton, "bone_length_loss_backward(labeled)");
    const auto children = skeleton.bone_children();
    const auto mu = mean_bone_lengths(unlabeled_batch, skeleton);
    const auto ml = mean_bone_lengths(labeled_batch, skeleton);
    const int64_t N = unlabeled_batch.dim(0);
    Tensor grad(unlabeled_batch.shape());
    for (int64_t n = 0; n < N; ++n) {
        for (size_t b = 0; b < children.size(); ++b) {
            const int j = children[b];
            const int p = skeleton.parent[static_cast<size_t>(j)];
            double diff[3];
            double d2 = 0.0;
            for (int d = 0; d < 3; ++d) {
                diff[d] = static_cast<double>(unlabeled_batch(n, j, d)) - unlabeled_batch(n, p, d);
                d2 += diff[d] * diff[d];
            }
            const double len = std::sqrt(d2);
            if (len < 1e-12) continue;
            const double coeff = 2.0 * (mu[b] - ml[b]) / (static_cast<double>(N) * len);
            for (int d = 0; d < 3; ++d) {
                grad(n, j, d) += static_cast<float>(coeff * diff[d]);
                grad(n, p, d) -= static_cast<float>(coeff * diff[d]);
            }
        }
    }
    return grad;
}

double reprojection_loss(const Tensor& projected_2d, const Tensor& input_2d) {
    check_pose_pair(projected_2d, input_2d, 2, "reprojection_loss");
    const int64_t n = projected_2d.size() / 2;
    const float* p = projected_2d.data();
    const float* g = input_2d.data();
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double dx = static_cast<double>(p[2 * i + 0]) - g[2 * i + 0];
        const double dy = static_cast<double>(p[2 * i + 1]) - g[2 * i + 1];
        sum += std::sqrt(dx * dx + dy * dy);
    }
    return sum / static_cast<double>(n);
}

Tensor reprojection_loss_backward(const Tensor& projected_2d, const Tensor& input_2d) {
    check_pose_pair(projected_2d, input_2d, 2, "reprojection_loss_backward");
    const int64_t n = projected_2d.size() / 2;
    Tensor grad(projected_2d.shape());
    const float* p = projected_2d.data();
    const float* g = input_2d.data();
    float* gp = grad.data();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
        const double dx = static_cast<double>(p[2 * i + 0]) - g[2 * i + 0];
        const double dy = static_cast<double>(p[2 * i + 1]) - g[2 * i + 1];
        const double norm = std::sqrt(dx * dx + dy * dy);
        if (norm > 1e-12) {
            gp[2 * i + 0] = static_cast<float>(dx * inv_n / norm);
            gp[2 * i + 1] = static_cast<float>(dy * inv_n / norm);
        }
    }
    return grad;
}

} // namespace poselift
