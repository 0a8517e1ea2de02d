#include "poselift/dataio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "poselift/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "poselift file formats are little-endian; big-endian hosts are unsupported");

namespace poselift {

using nlohmann::json;

const CameraModel& DatasetFile::camera_by_name(const std::string& name) const {
    for (const CameraModel& c : cameras)
        if (c.name == name) return c;
    throw DataError("dataset: unknown camera '" + name + "'");
}

void DatasetFile::validate() const {
    if (format_version != 1)
        throw DataError("dataset: unsupported format version " + std::to_string(format_version));
    skeleton.validate();
    if (!(fps > 0.0)) throw DataError("dataset: fps must be positive");
    for (const CameraModel& c : cameras) c.validate();
    const int64_t J = skeleton.num_joints();
    for (const SequenceRecord& s : sequences) {
        camera_by_name(s.camera); // throws with the camera name; re-wrap with the sequence id
        try {
            camera_by_name(s.camera);
        } catch (const DataError&) {
            throw DataError("dataset: sequence '" + s.id + "' references undeclared camera '" +
                            s.camera + "'");
        }
        if (s.frames_2d.rank() != 3 || s.frames_2d.dim(1) != J || s.frames_2d.dim(2) != 2)
            throw DataError("dataset: sequence '" + s.id + "' frames_2d must be [T," +
                            std::to_string(J) + ",2], got " + s.frames_2d.shape_str());
        const int64_t T = s.frames_2d.dim(0);
        if (s.labeled) {
            if (s.frames_3d.empty() || s.trajectory.empty())
                throw DataError("dataset: labeled sequence '" + s.id +
                                "' is missing frames_3d or trajectory");
            if (s.frames_3d.shape() != std::vector<int64_t>{T, J, 3})
                throw DataError("dataset: sequence '" + s.id + "' frames_3d must be [" +
                                std::to_string(T) + "," + std::to_string(J) + ",3], got " +
                                s.frames_3d.shape_str());
            if (s.trajectory.shape() != std::vector<int64_t>{T, 3})
                throw DataError("dataset: sequence '" + s.id + "' trajectory must be [" +
                                std::to_string(T) + ",3], got " + s.trajectory.shape_str());
        } else if (!s.frames_3d.empty() || !s.trajectory.empty()) {
            throw DataError("dataset: unlabeled sequence '" + s.id + "' carries 3-D blocks");
        }
    }
}

void SynthSpec::validate() const {
    if (num_sequences < 1) throw ConfigError("synth: num_sequences must be >= 1");
    if (frames_per_sequence < 2) throw ConfigError("synth: frames_per_sequence must be >= 2");
    if (num_cameras < 1) throw ConfigError("synth: num_cameras must be >= 1");
    if (num_labeled > num_sequences)
        throw ConfigError("synth: num_labeled exceeds num_sequences");
    if (!(fps > 0.0)) throw ConfigError("synth: fps must be positive");
    if (noise_std_px < 0.0) throw ConfigError("synth: noise_std_px must be >= 0");
    if (!(motion_scale > 0.0)) throw ConfigError("synth: motion_scale must be positive");
}

namespace {

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
double norm(Vec3 a) { return std::sqrt(a.x * a.x + a.y * a.y + a.z * a.z); }
Vec3 normalized(Vec3 a) {
    const double n = norm(a);
    return {a.x / n, a.y / n, a.z / n};
}

/// Row-major rotation matrix -> unit quaternion (w, x, y, z).
std::array<float, 4> matrix_to_quat(const std::array<double, 9>& m) {
    const double tr = m[0] + m[4] + m[8];
    double w, x, y, z;
    if (tr > 0) {
        double s = std::sqrt(tr + 1.0) * 2.0;
        w = 0.25 * s;
        x = (m[7] - m[5]) / s;
        y = (m[2] - m[6]) / s;
        z = (m[3] - m[1]) / s;
    } else if (m[0] > m[4] && m[0] > m[8]) {
        double s = std::sqrt(1.0 + m[0] - m[4] - m[8]) * 2.0;
        w = (m[7] - m[5]) / s;
        x = 0.25 * s;
        y = (m[1] + m[3]) / s;
        z = (m[2] + m[6]) / s;
    } else if (m[4] > m[8]) {
        double s = std::sqrt(1.0 + m[4] - m[0] - m[8]) * 2.0;
        w = (m[2] - m[6]) / s;
        x = (m[1] + m[3]) / s;
        y = 0.25 * s;
        z = (m[5] + m[7]) / s;
    } else {
        double s = std::sqrt(1.0 + m[8] - m[0] - m[4]) * 2.0;
        w = (m[3] - m[1]) / s;
        x = (m[2] + m[6]) / s;
        y = (m[5] + m[7]) / s;
        z = 0.25 * s;
    }
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    return {static_cast<float>(w / n), static_cast<float>(x / n), static_cast<float>(y / n),
            static_cast<float>(z / n)};
}

/// Camera at `pos` (world mm, z-up) looking at `target`, image y downward.
CameraModel look_at_camera(Vec3 pos, Vec3 target) {
    const Vec3 fwd = normalized(target - pos);
    const Vec3 up{0, 0, 1};
    const Vec3 right = normalized(cross(fwd, up));
    const Vec3 down = cross(fwd, right);
    const std::array<double, 9> R{right.x, right.y, right.z, down.x, down.y,
                                  down.z,  fwd.x,  fwd.y,  fwd.z};
    CameraModel cam;
    cam.rotation = matrix_to_quat(R);
    cam.translation = {static_cast<float>(pos.x), static_cast<float>(pos.y),
                       static_cast<float>(pos.z)};
    return cam;
}

struct BoneSpec {
    double length;    // mm before subject scale
    Vec3 rest_dir;    // unit direction in world frame, subject facing +x, z up
    double amp_polar; // motion amplitude, radians
    double amp_azim;
};

/// Rest geometry of the generated 17-joint skeleton, indexed by joint.
/// Joint 0 (the root) has no bone.
std::vector<BoneSpec> bone_table() {
    auto dir = [](double x, double y, double z) { return normalized(Vec3{x, y, z}); };
    std::vector<BoneSpec> t(17);
    t[1] = {135, dir(0, -1, 0), 0.10, 0.10};       // hip -> rhip
    t[2] = {440, dir(0, 0, -1), 0.45, 0.20};       // rhip -> rknee
    t[3] = {445, dir(0.1, 0, -1), 0.40, 0.15};     // rknee -> rankle
    t[4] = {135, dir(0, 1, 0), 0.10, 0.10};        // hip -> lhip
    t[5] = {440, dir(0, 0, -1), 0.45, 0.20};       // lhip -> lknee
    t[6] = {445, dir(0.1, 0, -1), 0.40, 0.15};     // lknee -> lankle
    t[7] = {230, dir(0, 0, 1), 0.06, 0.06};        // hip -> spine
    t[8] = {255, dir(0, 0, 1), 0.06, 0.06};        // spine -> thorax
    t[9] = {115, dir(0.1, 0, 1), 0.08, 0.08};      // thorax -> neck
    t[10] = {115, dir(0.1, 0, 1), 0.08, 0.08};     // neck -> head
    t[11] = {150, dir(0, 1, 0.15), 0.10, 0.10};    // thorax -> lshoulder
    t[12] = {280, dir(0, 0.3, -1), 0.40, 0.30};    // lshoulder -> lelbow
    t[13] = {250, dir(0.3, 0.2, -1), 0.45, 0.35};  // lelbow -> lwrist
    t[14] = {150, dir(0, -1, 0.15), 0.10, 0.10};   // thorax -> rshoulder
    t[15] = {280, dir(0, -0.3, -1), 0.40, 0.30};   // rshoulder -> relbow
    t[16] = {250, dir(0.3, -0.2, -1), 0.45, 0.35}; // relbow -> rwrist
    return t;
}

Vec3 spherical_dir(double polar, double azim) {
    return {std::sin(polar) * std::cos(azim), std::sin(polar) * std::sin(azim), std::cos(polar)};
}

} // namespace

DatasetFile generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    DatasetFile ds;
    ds.fps = spec.fps;
    ds.noise_std_px = spec.noise_std_px;
    ds.skeleton = h36m_skeleton();
    const int J = ds.skeleton.num_joints();
    const int num_labeled = spec.num_labeled < 0 ? spec.num_sequences : spec.num_labeled;

    for (int c = 0; c < spec.num_cameras; ++c) {
        const double angle = 2.0 * 3.14159265358979323846 * c / spec.num_cameras +
                             rng.uniform(-0.2, 0.2);
        const double radius = rng.uniform(3600.0, 4400.0);
        const Vec3 pos{radius * std::cos(angle), radius * std::sin(angle),
                       rng.uniform(1200.0, 1800.0)};
        CameraModel cam = look_at_camera(pos, Vec3{0, 0, 900});
        cam.name = "cam" + std::to_string(c);
        cam.fx = static_cast<float>(rng.uniform(1000.0, 1200.0));
        cam.fy = static_cast<float>(rng.uniform(1000.0, 1200.0));
        cam.image_w = 1000.0f;
        cam.image_h = 1002.0f;
        cam.cx = static_cast<float>(cam.image_w / 2 + rng.uniform(-15.0, 15.0));
        cam.cy = static_cast<float>(cam.image_h / 2 + rng.uniform(-15.0, 15.0));
        cam.k1 = static_cast<float>(rng.uniform(-0.12, -0.04));
        cam.k2 = static_cast<float>(rng.uniform(-0.02, 0.02));
        cam.k3 = static_cast<float>(rng.uniform(-0.004, 0.004));
        cam.p1 = static_cast<float>(rng.uniform(-0.004, 0.004));
        cam.p2 = static_cast<float>(rng.uniform(-0.004, 0.004));
        cam.validate();
        ds.cameras.push_back(cam);
    }

    const auto bones = bone_table();
    const int root = ds.skeleton.root();
    const double two_pi = 2.0 * 3.14159265358979323846;

    for (int s = 0; s < spec.num_sequences; ++s) {
        const double subject_scale = rng.uniform(0.9, 1.1);

        // Per-bone sinusoidal angle tracks around the rest direction.
        struct Track {
            double polar0, azim0, amp_p, amp_a, freq_p, freq_a, phase_p, phase_a;
        };
        std::vector<Track> tracks(static_cast<size_t>(J));
        for (int j = 0; j < J; ++j) {
            if (j == root) continue;
            const BoneSpec& b = bones[static_cast<size_t>(j)];
            Track t;
            t.polar0 = std::acos(std::clamp(b.rest_dir.z, -1.0, 1.0));
            t.azim0 = std::atan2(b.rest_dir.y, b.rest_dir.x);
            t.amp_p = b.amp_polar * spec.motion_scale * rng.uniform(0.5, 1.0);
            t.amp_a = b.amp_azim * spec.motion_scale * rng.uniform(0.5, 1.0);
            t.freq_p = rng.uniform(0.4, 1.4); // Hz
            t.freq_a = rng.uniform(0.4, 1.4);
            t.phase_p = rng.uniform(0.0, two_pi);
            t.phase_a = rng.uniform(0.0, two_pi);
            tracks[static_cast<size_t>(j)] = t;
        }
        const double root_ax = rng.uniform(100.0, 400.0), root_fx = rng.uniform(0.15, 0.5),
                     root_px = rng.uniform(0.0, two_pi);
        const double root_ay = rng.uniform(100.0, 400.0), root_fy = rng.uniform(0.15, 0.5),
                     root_py = rng.uniform(0.0, two_pi);
        const double root_az = rng.uniform(20.0, 60.0), root_fz = rng.uniform(0.3, 0.8),
                     root_pz = rng.uniform(0.0, two_pi);

        SequenceRecord rec;
        rec.id = "seq" + std::to_string(s);
        rec.camera = ds.cameras[static_cast<size_t>(s % spec.num_cameras)].name;
        rec.labeled = s < num_labeled;
        const CameraModel& cam = ds.camera_by_name(rec.camera);

        const int64_t T = spec.frames_per_sequence;
        Tensor pose_rel({T, J, 3});
        Tensor traj({T, 3});

        // Evaluate joints in parent-before-child order; the 17-joint table is
        // already topologically sorted.
        for (int64_t f = 0; f < T; ++f) {
            const double tsec = static_cast<double>(f) / spec.fps;
            std::vector<Vec3> world(static_cast<size_t>(J));
            world[static_cast<size_t>(root)] = {
                root_ax * std::sin(two_pi * root_fx * tsec + root_px),
                root_ay * std::sin(two_pi * root_fy * tsec + root_py),
                900.0 * subject_scale + root_az * std::sin(two_pi * root_fz * tsec + root_pz)};
            for (int j = 0; j < J; ++j) {
                if (j == root) continue;
                const Track& t = tracks[static_cast<size_t>(j)];
                const double polar = t.polar0 + t.amp_p * std::sin(two_pi * t.freq_p * tsec + t.phase_p);
                const double azim = t.azim0 + t.amp_a * std::sin(two_pi * t.freq_a * tsec + t.phase_a);
                const int parent = ds.skeleton.parent[static_cast<size_t>(j)];
                world[static_cast<size_t>(j)] =
                    world[static_cast<size_t>(parent)] +
                    (bones[static_cast<size_t>(j)].length * subject_scale) *
                        spherical_dir(polar, azim);
            }
            // World -> camera, split into root-relative pose and trajectory.
            const auto R = cam.rotation_matrix();
            auto to_cam = [&](Vec3 p) {
                const Vec3 d{p.x - cam.translation[0], p.y - cam.translation[1],
                             p.z - cam.translation[2]};
                return Vec3{R[0] * d.x + R[1] * d.y + R[2] * d.z,
                            R[3] * d.x + R[4] * d.y + R[5] * d.z,
                            R[6] * d.x + R[7] * d.y + R[8] * d.z};
            };
            const Vec3 root_cam = to_cam(world[static_cast<size_t>(root)]);
            traj(f, 0) = static_cast<float>(root_cam.x);
            traj(f, 1) = static_cast<float>(root_cam.y);
            traj(f, 2) = static_cast<float>(root_cam.z);
            for (int j = 0; j < J; ++j) {
                const Vec3 pc = to_cam(world[static_cast<size_t>(j)]);
                pose_rel(f, j, 0) = static_cast<float>(pc.x - root_cam.x);
                pose_rel(f, j, 1) = static_cast<float>(pc.y - root_cam.y);
                pose_rel(f, j, 2) = static_cast<float>(pc.z - root_cam.z);
            }
        }

        // 2-D keypoints are projections of the *stored* float32 data, so the
        // noiseless dataset is self-consistent to the last bit.
        Tensor cam_points({T, J, 3});
        for (int64_t f = 0; f < T; ++f)
            for (int j = 0; j < J; ++j)
                for (int d = 0; d < 3; ++d) cam_points(f, j, d) = pose_rel(f, j, d) + traj(f, d);
        rec.frames_2d = project(cam_points, cam);
        if (spec.noise_std_px > 0.0) {
            float* p = rec.frames_2d.data();
            for (int64_t i = 0; i < rec.frames_2d.size(); ++i)
                p[i] = static_cast<float>(p[i] + rng.normal(0.0, spec.noise_std_px));
        }
        if (rec.labeled) {
            rec.frames_3d = std::move(pose_rel);
            rec.trajectory = std::move(traj);
        }
        ds.sequences.push_back(std::move(rec));
    }
    ds.validate();
    return ds;
}

namespace {

json camera_to_json(const CameraModel& c) {
    return json{{"name", c.name},
                {"fx", c.fx},
                {"fy", c.fy},
                {"cx", c.cx},
                {"cy", c.cy},
                {"k1", c.k1},
                {"k2", c.k2},
                {"k3", c.k3},
                {"p1", c.p1},
                {"p2", c.p2},
                {"rotation", {c.rotation[0], c.rotation[1], c.rotation[2], c.rotation[3]}},
                {"translation", {c.translation[0], c.translation[1], c.translation[2]}},
                {"image_w", c.image_w},
                {"image_h", c.image_h},
                {"use_distortion", c.use_distortion}};
}

CameraModel camera_from_json(const json& j) {
    CameraModel c;
    c.name = j.at("name").get<std::string>();
    c.fx = j.at("fx").get<float>();
    c.fy = j.at("fy").get<float>();
    c.cx = j.at("cx").get<float>();
    c.cy = j.at("cy").get<float>();
    c.k1 = j.at("k1").get<float>();
    c.k2 = j.at("k2").get<float>();
    c.k3 = j.at("k3").get<float>();
    c.p1 = j.at("p1").get<float>();
    c.p2 = j.at("p2").get<float>();
    for (int i = 0; i < 4; ++i) c.rotation[static_cast<size_t>(i)] = j.at("rotation").at(i).get<float>();
    for (int i = 0; i < 3; ++i)
        c.translation[static_cast<size_t>(i)] = j.at("translation").at(i).get<float>();
    c.image_w = j.at("image_w").get<float>();
    c.image_h = j.at("image_h").get<float>();
    c.use_distortion = j.value("use_distortion", true);
    return c;
}

void write_block(std::ostream& os, const Tensor& t) {
    const uint32_t bytes = static_cast<uint32_t>(t.size() * sizeof(float));
    os.write(reinterpret_cast<const char*>(&bytes), sizeof(bytes));
    os.write(reinterpret_cast<const char*>(t.data()), bytes);
}

Tensor read_block(std::istream& is, std::vector<int64_t> shape, const std::string& what) {
    uint32_t bytes = 0;
    if (!is.read(reinterpret_cast<char*>(&bytes), sizeof(bytes)))
        throw DataError("dataset: truncated file while reading block header of " + what);
    Tensor t(std::move(shape));
    if (bytes != static_cast<uint32_t>(t.size() * sizeof(float)))
        throw DataError("dataset: block size mismatch for " + what + ": header says " +
                        std::to_string(bytes) + " bytes, expected " +
                        std::to_string(t.size() * sizeof(float)));
    if (!is.read(reinterpret_cast<char*>(t.data()), bytes))
        throw DataError("dataset: truncated float block for " + what);
    return t;
}

} // namespace

void save_dataset(const DatasetFile& ds, const std::string& path) {
    ds.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("dataset: cannot open '" + path + "' for writing");

    json pairs = json::array();
    for (const auto& [l, r] : ds.skeleton.left_right_pairs) pairs.push_back({l, r});
    json header{{"format", "poselift-dataset"},
                {"version", ds.format_version},
                {"fps", ds.fps},
                {"noise_std_px", ds.noise_std_px},
                {"units", {{"keypoints_2d", "px"}, {"pose_3d", "mm"}}},
                {"skeleton",
                 {{"joint_names", ds.skeleton.joint_names},
                  {"parent", ds.skeleton.parent},
                  {"left_right_pairs", pairs}}}};
    if (!ds.annotations.empty()) header["annotations"] = ds.annotations;
    os << header.dump() << '\n';
    for (const CameraModel& c : ds.cameras) os << json{{"camera", camera_to_json(c)}}.dump() << '\n';
    for (const SequenceRecord& s : ds.sequences)
        os << json{{"sequence",
                    {{"id", s.id},
                     {"camera", s.camera},
                     {"frames", s.frames()},
                     {"labeled", s.labeled}}}}
                  .dump()
           << '\n';
    os << json{{"end_header", true}}.dump() << '\n';

    for (const SequenceRecord& s : ds.sequences) {
        write_block(os, s.frames_2d);
        if (s.labeled) {
            write_block(os, s.frames_3d);
            write_block(os, s.trajectory);
        }
    }
    if (!os) throw DataError("dataset: write failed for '" + path + "'");
}

DatasetFile load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("dataset: cannot open '" + path + "'");

    DatasetFile ds;
    std::string line;
    int line_no = 0;
    bool got_header = false, got_end = false;
    std::vector<int64_t> frame_counts;

    while (!got_end && std::getline(is, line)) {
        ++line_no;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("dataset: line " + std::to_string(line_no) + ": invalid JSON: " +
                            e.what());
        }
        try {
            if (!got_header) {
                if (j.value("format", "") != "poselift-dataset")
                    throw DataError("dataset: line 1: not a poselift dataset");
                ds.format_version = j.at("version").get<int>();
                if (ds.format_version != 1)
                    throw DataError("dataset: unsupported format version " +
                                    std::to_string(ds.format_version));
                ds.fps = j.at("fps").get<double>();
                ds.noise_std_px = j.value("noise_std_px", 0.0);
                ds.annotations =
                    j.value("annotations", std::map<std::string, std::string>{});
                const json& sk = j.at("skeleton");
                ds.skeleton.joint_names = sk.at("joint_names").get<std::vector<std::string>>();
                ds.skeleton.parent = sk.at("parent").get<std::vector<int>>();
                for (const auto& p : sk.at("left_right_pairs"))
                    ds.skeleton.left_right_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
                got_header = true;
            } else if (j.contains("camera")) {
                ds.cameras.push_back(camera_from_json(j.at("camera")));
            } else if (j.contains("sequence")) {
                const json& sq = j.at("sequence");
                SequenceRecord rec;
                rec.id = sq.at("id").get<std::string>();
                rec.camera = sq.at("camera").get<std::string>();
                rec.labeled = sq.at("labeled").get<bool>();
                frame_counts.push_back(sq.at("frames").get<int64_t>());
                ds.sequences.push_back(std::move(rec));
            } else if (j.contains("end_header")) {
                got_end = true;
            } else {
                throw DataError("dataset: line " + std::to_string(line_no) +
                                ": unrecognized record");
            }
        } catch (const json::exception& e) {
            throw DataError("dataset: line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!got_end) throw DataError("dataset: missing end_header record (truncated header)");

    const int64_t J = ds.skeleton.num_joints();
    for (size_t i = 0; i < ds.sequences.size(); ++i) {
        SequenceRecord& rec = ds.sequences[i];
        const int64_t T = frame_counts[i];
        if (T < 1) throw DataError("dataset: sequence '" + rec.id + "' declares no frames");
        rec.frames_2d = read_block(is, {T, J, 2}, "sequence '" + rec.id + "' frames_2d");
        if (rec.labeled) {
            rec.frames_3d = read_block(is, {T, J, 3}, "sequence '" + rec.id + "' frames_3d");
            rec.trajectory = read_block(is, {T, 3}, "sequence '" + rec.id + "' trajectory");
        }
    }
    char extra = 0;
    if (is.read(&extra, 1))
        throw DataError("dataset: trailing bytes after the last declared block");
    ds.validate();
    return ds;
}

std::vector<SequenceRecord> split_corrupted(const SequenceRecord& sequence,
                                            const std::vector<bool>& valid_mask) {
    const int64_t T = sequence.frames();
    if (static_cast<int64_t>(valid_mask.size()) != T)
        throw ShapeError("split_corrupted: mask length " + std::to_string(valid_mask.size()) +
                         " does not match " + std::to_string(T) + " frames");
    std::vector<SequenceRecord> out;
    int64_t start = -1;
    auto flush = [&](int64_t end) { // [start, end)
        if (start < 0) return;
        SequenceRecord part;
        part.id = sequence.id + ".part" + std::to_string(out.size());
        part.camera = sequence.camera;
        part.labeled = sequence.labeled;
        const int64_t len = end - start;
        const int64_t J = sequence.frames_2d.dim(1);
        part.frames_2d = Tensor({len, J, 2});
        std::memcpy(part.frames_2d.data(), &sequence.frames_2d(start, 0, 0),
                    static_cast<size_t>(len * J * 2) * sizeof(float));
        if (sequence.labeled) {
            part.frames_3d = Tensor({len, J, 3});
            std::memcpy(part.frames_3d.data(), &sequence.frames_3d(start, 0, 0),
                        static_cast<size_t>(len * J * 3) * sizeof(float));
            part.trajectory = Tensor({len, 3});
            std::memcpy(part.trajectory.data(), &sequence.trajectory(start, 0),
                        static_cast<size_t>(len * 3) * sizeof(float));
        }
        out.push_back(std::move(part));
        start = -1;
    };
    for (int64_t t = 0; t < T; ++t) {
        if (valid_mask[static_cast<size_t>(t)]) {
            if (start < 0) start = t;
        } else {
            flush(t);
        }
    }
    flush(T);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'P', 'L', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;

json config_to_json(const ModelConfig& c) {
    return json{{"num_joints", c.num_joints},   {"in_dims", c.in_dims},
                {"out_dims", c.out_dims},       {"out_joints", c.out_joints},
                {"blocks", c.blocks},           {"kernel_width", c.kernel_width},
                {"channels", c.channels},       {"dropout_p", c.dropout_p},
                {"causal", c.causal},           {"dense_mode", c.dense_mode}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.num_joints = j.at("num_joints").get<int>();
    c.in_dims = j.at("in_dims").get<int>();
    c.out_dims = j.at("out_dims").get<int>();
    c.out_joints = j.value("out_joints", -1);
    c.blocks = j.at("blocks").get<int>();
    c.kernel_width = j.at("kernel_width").get<int>();
    c.channels = j.at("channels").get<int>();
    c.dropout_p = j.at("dropout_p").get<float>();
    c.causal = j.at("causal").get<bool>();
    c.dense_mode = j.at("dense_mode").get<bool>();
    return c;
}

} // namespace

const Tensor* Checkpoint::find_blob(const std::string& name) const {
    for (const auto& [n, t] : blobs)
        if (n == name) return &t;
    return nullptr;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    os.write(kCheckpointMagic, 4);
    os.write(reinterpret_cast<const char*>(&kCheckpointVersion), 4);

    json meta{{"model", config_to_json(ck.config)},
              {"epoch", ck.epoch},
              {"input_norm", "x'=2x/w-1, y'=2y/w-h/w"},
              {"rng_states", ck.rng_states},
              {"annotations", ck.annotations}};
    const std::string meta_str = meta.dump();
    const uint32_t meta_len = static_cast<uint32_t>(meta_str.size());
    os.write(reinterpret_cast<const char*>(&meta_len), 4);
    os.write(meta_str.data(), meta_len);

    const uint32_t count = static_cast<uint32_t>(ck.blobs.size());
    os.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& [name, tensor] : ck.blobs) {
        const uint16_t name_len = static_cast<uint16_t>(name.size());
        os.write(reinterpret_cast<const char*>(&name_len), 2);
        os.write(name.data(), name_len);
        const uint8_t rank = static_cast<uint8_t>(tensor.rank());
        os.write(reinterpret_cast<const char*>(&rank), 1);
        for (int d = 0; d < tensor.rank(); ++d) {
            const int64_t dim = tensor.dim(d);
            os.write(reinterpret_cast<const char*>(&dim), 8);
        }
        os.write(reinterpret_cast<const char*>(tensor.data()),
                 static_cast<std::streamsize>(tensor.size() * sizeof(float)));
    }
    if (!os) throw DataError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open '" + path + "'");
    char magic[4] = {};
    uint32_t version = 0;
    if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw DataError("checkpoint: bad magic bytes in '" + path + "'");
    if (!is.read(reinterpret_cast<char*>(&version), 4) || version != kCheckpointVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));

    uint32_t meta_len = 0;
    if (!is.read(reinterpret_cast<char*>(&meta_len), 4))
        throw DataError("checkpoint: truncated metadata header");
    std::string meta_str(meta_len, '\0');
    if (!is.read(meta_str.data(), meta_len)) throw DataError("checkpoint: truncated metadata");
    Checkpoint ck;
    try {
        const json meta = json::parse(meta_str);
        ck.config = config_from_json(meta.at("model"));
        ck.epoch = meta.at("epoch").get<int>();
        ck.rng_states = meta.value("rng_states", std::map<std::string, std::string>{});
        ck.annotations = meta.value("annotations", std::map<std::string, std::string>{});
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint: invalid metadata: ") + e.what());
    }

    uint32_t count = 0;
    if (!is.read(reinterpret_cast<char*>(&count), 4))
        throw DataError("checkpoint: truncated blob count");
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t name_len = 0;
        if (!is.read(reinterpret_cast<char*>(&name_len), 2))
            throw DataError("checkpoint: truncated blob name header");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw DataError("checkpoint: truncated blob name");
        uint8_t rank = 0;
        if (!is.read(reinterpret_cast<char*>(&rank), 1))
            throw DataError("checkpoint: truncated blob '" + name + "'");
        std::vector<int64_t> shape(rank);
        for (uint8_t d = 0; d < rank; ++d)
            if (!is.read(reinterpret_cast<char*>(&shape[d]), 8))
                throw DataError("checkpoint: truncated shape of blob '" + name + "'");
        Tensor t(shape);
        if (!is.read(reinterpret_cast<char*>(t.data()),
                     static_cast<std::streamsize>(t.size() * sizeof(float))))
            throw DataError("checkpoint: truncated data of blob '" + name + "'");
        ck.blobs.emplace_back(std::move(name), std::move(t));
    }
    return ck;
}

Checkpoint make_model_checkpoint(TemporalModel& model, int epoch) {
    Checkpoint ck;
    ck.config = model.config();
    ck.epoch = epoch;
    for (const ParamRef& p : model.trainable_parameters()) ck.blobs.emplace_back(p.name, *p.tensor);
    for (const ParamRef& p : model.state_tensors()) ck.blobs.emplace_back(p.name, *p.tensor);
    return ck;
}

TemporalModel model_from_checkpoint(const Checkpoint& ck) {
    TemporalModel model = TemporalModel::build(ck.config, 0);
    auto fill = [&](const ParamRef& p) {
        const Tensor* blob = ck.find_blob(p.name);
        if (!blob) throw DataError("checkpoint: missing parameter blob '" + p.name + "'");
        if (blob->shape() != p.tensor->shape())
            throw DataError("checkpoint: parameter '" + p.name + "' has shape " +
                            blob->shape_str() + ", model expects " + p.tensor->shape_str());
        *p.tensor = *blob;
    };
    for (const ParamRef& p : model.trainable_parameters()) fill(p);
    for (const ParamRef& p : model.state_tensors()) fill(p);
    return model;
}

} // namespace poselift
