#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "ev4dgs/core/error.hpp"
#include "json.hpp"

namespace ev4dgs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;
};

/// World-to-camera rigid transform: x_cam = R * x_world + t.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return R * p + t; }
  Vec3 center() const { return -R.transpose() * t; }
};

struct Camera {
  Intrinsics intrinsics;
  Pose pose;
};

inline constexpr double kMinDepth = 1e-6;

struct Projection {
  std::vector<Vec2> pixels;
  std::vector<double> depths;
  std::vector<bool> valid;  // false for points behind (or on) the camera plane
};

/// Pinhole projection; pixel centers sit at integer coordinates.
inline Projection project(const std::vector<Vec3>& points, const Camera& cam) {
  Projection out;
  out.pixels.resize(points.size());
  out.depths.resize(points.size());
  out.valid.resize(points.size());
  const auto& k = cam.intrinsics;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 pc = cam.pose.apply(points[i]);
    out.depths[i] = pc.z();
    out.valid[i] = pc.z() >= kMinDepth;
    if (out.valid[i]) {
      out.pixels[i] = Vec2(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
    } else {
      out.pixels[i] = Vec2::Zero();
    }
  }
  return out;
}

inline bool is_rotation(const Mat3& R, double tol = 1e-6) {
  return (R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol && R.determinant() > 0.0;
}

/// Camera looking from `eye` at `target`; image x right, y down, z forward.
inline Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up_hint = Vec3(0, 0, 1)) {
  const Vec3 fwd = (target - eye).normalized();
  Vec3 right = fwd.cross(up_hint);
  if (right.norm() < 1e-9) right = fwd.cross(Vec3(0, 1, 0));
  right.normalize();
  const Vec3 down = fwd.cross(right);
  Pose p;
  p.R.row(0) = right.transpose();
  p.R.row(1) = down.transpose();
  p.R.row(2) = fwd.transpose();
  p.t = -p.R * eye;
  return p;
}

struct TimedPose {
  double t = 0.0;
  Pose pose;
};

/// Calibrated camera with timestamped poses. Poses between samples are
/// interpolated: translation linearly, rotation by slerp.
class CameraTrack {
 public:
  CameraTrack() = default;
  CameraTrack(Intrinsics k, std::vector<TimedPose> poses) : intrinsics_(k), poses_(std::move(poses)) {
    validate();
  }

  const Intrinsics& intrinsics() const { return intrinsics_; }
  const std::vector<TimedPose>& poses() const { return poses_; }
  std::size_t size() const { return poses_.size(); }
  double time(std::size_t i) const { return poses_[i].t; }
  double t_begin() const { return poses_.front().t; }
  double t_end() const { return poses_.back().t; }

  Camera camera(std::size_t i) const { return {intrinsics_, poses_[i].pose}; }

  Camera camera_at(double t) const { return {intrinsics_, pose_at(t)}; }

  Pose pose_at(double t) const {
    if (poses_.size() == 1 || t <= poses_.front().t) return poses_.front().pose;
    if (t >= poses_.back().t) return poses_.back().pose;
    const auto it = std::upper_bound(poses_.begin(), poses_.end(), t,
                                     [](double v, const TimedPose& p) { return v < p.t; });
    const TimedPose& b = *it;
    const TimedPose& a = *(it - 1);
    const double u = (t - a.t) / (b.t - a.t);
    if (u == 0.0) return a.pose;
    Pose out;
    if (a.pose.R == b.pose.R) {
      out.R = a.pose.R;
    } else {
      const Eigen::Quaterniond qa(a.pose.R);
      const Eigen::Quaterniond qb(b.pose.R);
      out.R = qa.slerp(u, qb).toRotationMatrix();
    }
    out.t = a.pose.t + u * (b.pose.t - a.pose.t);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["intrinsics"] = {{"fx", intrinsics_.fx}, {"fy", intrinsics_.fy}, {"cx", intrinsics_.cx},
                       {"cy", intrinsics_.cy}, {"w", intrinsics_.width}, {"h", intrinsics_.height}};
    j["poses"] = nlohmann::json::array();
    for (const auto& p : poses_) {
      std::vector<double> r(9);
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) r[a * 3 + b] = p.pose.R(a, b);
      j["poses"].push_back({{"t", p.t}, {"R", r}, {"tvec", {p.pose.t.x(), p.pose.t.y(), p.pose.t.z()}}});
    }
    return j;
  }

  static CameraTrack from_json(const nlohmann::json& j) {
    try {
      Intrinsics k;
      const auto& in = j.at("intrinsics");
      k.fx = in.at("fx").get<double>();
      k.fy = in.at("fy").get<double>();
      k.cx = in.at("cx").get<double>();
      k.cy = in.at("cy").get<double>();
      k.width = in.at("w").get<int>();
      k.height = in.at("h").get<int>();
      std::vector<TimedPose> poses;
      for (const auto& pj : j.at("poses")) {
        TimedPose tp;
        tp.t = pj.at("t").get<double>();
        const auto r = pj.at("R").get<std::vector<double>>();
        const auto tv = pj.at("tvec").get<std::vector<double>>();
        if (r.size() != 9 || tv.size() != 3) throw DataError("pose needs 9 rotation and 3 translation values");
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) tp.pose.R(a, b) = r[a * 3 + b];
        tp.pose.t = Vec3(tv[0], tv[1], tv[2]);
        poses.push_back(tp);
      }
      return CameraTrack(k, std::move(poses));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("camera track JSON: ") + e.what());
    }
  }

  static CameraTrack load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open camera track " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("camera track " + path + ": " + e.what());
    }
    return from_json(j);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write camera track " + path);
    out << to_json().dump(1) << "\n";
  }

 private:
  void validate() const {
    if (poses_.empty()) throw DataError("camera track has no poses");
    if (intrinsics_.width <= 0 || intrinsics_.height <= 0) throw DataError("camera resolution must be positive");
    for (std::size_t i = 0; i < poses_.size(); ++i) {
      if (i > 0 && !(poses_[i].t > poses_[i - 1].t)) throw DataError("pose timestamps must increase strictly");
      if (!is_rotation(poses_[i].pose.R)) throw DataError("pose rotation is not orthonormal");
    }
  }

  Intrinsics intrinsics_;
  std::vector<TimedPose> poses_;
};

}  // namespace ev4dgs
