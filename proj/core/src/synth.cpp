#include "handfold/synth.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <random>

#include "handfold/common.hpp"

namespace handfold {

namespace {

constexpr double kPi = 3.14159265358979323846;

Mat3 axis_rotation(const Vec3& axis, double angle) {
  const Vec3 a = axis.normalized();
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 k;
  k << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
  return Mat3::Identity() * c + k * s + a * a.transpose() * (1 - c);
}

struct FingerSpec {
  Vec3 base;
  Vec3 rest_dir;
  std::vector<double> segment_lengths;
  double radius_base;
  double radius_tip;
  double max_flex_rad;
};

// Segment endpoints for one finger: joints[0] is the base knuckle, each
// following joint ends one flexed segment.
std::vector<Vec3> pose_finger(const FingerSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> abduct(-8.0 * kPi / 180.0, 8.0 * kPi / 180.0);
  std::uniform_real_distribution<double> flex(3.0 * kPi / 180.0, spec.max_flex_rad);
  const Vec3 z(0, 0, 1);
  Vec3 dir = axis_rotation(z, abduct(rng)) * spec.rest_dir;
  Vec3 curl_axis = dir.cross(z);
  if (curl_axis.norm() < 1e-9) curl_axis = Vec3(1, 0, 0);
  curl_axis.normalize();

  std::vector<Vec3> joints;
  joints.push_back(spec.base);
  Vec3 p = spec.base;
  for (double len : spec.segment_lengths) {
    dir = axis_rotation(curl_axis, flex(rng)) * dir;
    p = p + len * dir;
    joints.push_back(p);
  }
  return joints;
}

void sample_capsule(const Vec3& a, const Vec3& b, double ra, double rb, std::int64_t count,
                    bool cap_end, std::mt19937_64& rng, std::vector<Vec3>& out) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Vec3 axis = b - a;
  const double len = axis.norm();
  Vec3 d = len > 1e-9 ? Vec3(axis / len) : Vec3(0, 1, 0);
  Vec3 ua = d.cross(Vec3(0, 0, 1));
  if (ua.norm() < 1e-6) ua = d.cross(Vec3(1, 0, 0));
  ua.normalize();
  const Vec3 va = d.cross(ua);
  for (std::int64_t i = 0; i < count; ++i) {
    const double t = u01(rng);
    const double theta = 2 * kPi * u01(rng);
    const double r = ra + t * (rb - ra);
    out.push_back(a + t * axis + r * (std::cos(theta) * ua + std::sin(theta) * va));
  }
  if (cap_end) {
    // hemispherical cap beyond the far endpoint
    const std::int64_t cap_n = std::max<std::int64_t>(count / 4, 4);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::int64_t i = 0; i < cap_n; ++i) {
      Vec3 g(gauss(rng), gauss(rng), gauss(rng));
      if (g.norm() < 1e-9) g = Vec3(0, 0, 1);
      g.normalize();
      if (g.dot(d) < 0) g = -g;
      out.push_back(b + rb * g);
    }
  }
}

void sample_ellipsoid(const Vec3& center, const Vec3& half_axes, std::int64_t count,
                      std::mt19937_64& rng, std::vector<Vec3>& out) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::int64_t i = 0; i < count; ++i) {
    Vec3 g(gauss(rng), gauss(rng), gauss(rng));
    if (g.norm() < 1e-9) g = Vec3(0, 0, 1);
    g.normalize();
    out.push_back(center + Vec3(g.x() * half_axes.x(), g.y() * half_axes.y(),
                                g.z() * half_axes.z()));
  }
}

}  // namespace

RawHand synth_hand_raw(std::uint64_t seed, const SynthOptions& opt) {
  const KinematicChain chain = KinematicChain::for_joint_count(opt.joints);
  std::mt19937_64 rng(derive_seed(seed, 0x5A17));

  // Canonical hand in its local frame (mm): palm ellipsoid at the origin,
  // finger bases along the palm's upper edge, thumb off the side.
  const Vec3 palm_center(0, 0, 0);
  const Vec3 palm_half(38, 26, 11);

  int spread_count = 0;
  for (const auto& f : chain.fingers) spread_count += (f.thumb || f.wrist) ? 0 : 1;

  std::vector<FingerSpec> specs;
  std::vector<const KinematicChain::Finger*> fingers;
  int spread_pos = 0, wrist_pos = 0;
  for (const auto& f : chain.fingers) {
    FingerSpec s;
    const std::size_t m = f.joints.size();
    if (f.thumb) {
      s.base = Vec3(-36, -6, 0);
      s.rest_dir = Vec3(-0.72, 0.65, 0).normalized();
      s.radius_base = 8.0;
      s.radius_tip = 5.5;
      s.max_flex_rad = 35.0 * kPi / 180.0;
      const double lens[4] = {30, 24, 18, 14};
      for (std::size_t k = 0; k + 1 < m; ++k) s.segment_lengths.push_back(lens[k % 4]);
    } else if (f.wrist) {
      s.base = Vec3(wrist_pos == 0 ? -12.0 : 12.0, -28, 0);
      s.rest_dir = Vec3(wrist_pos == 0 ? -0.15 : 0.15, -1, 0).normalized();
      s.radius_base = 10.0;
      s.radius_tip = 9.0;
      s.max_flex_rad = 8.0 * kPi / 180.0;
      ++wrist_pos;
      // single-joint stubs still get one short segment of geometry
      s.segment_lengths.assign(std::max<std::size_t>(m - 1, 1), 18.0);
    } else {
      const double x =
          spread_count > 1 ? -28.0 + 56.0 * spread_pos / (spread_count - 1) : 0.0;
      s.base = Vec3(x, 24, 0);
      s.rest_dir = Vec3(0, 1, 0);
      const double scale[] = {1.0, 1.07, 1.0, 0.82};
      const double fs = scale[spread_pos % 4];
      s.radius_base = 7.0;
      s.radius_tip = 4.5;
      s.max_flex_rad = 50.0 * kPi / 180.0;
      const double lens[4] = {34, 24, 17, 13};
      for (std::size_t k = 0; k + 1 < m; ++k) s.segment_lengths.push_back(lens[k % 4] * fs);
      ++spread_pos;
    }
    specs.push_back(std::move(s));
    fingers.push_back(&f);
  }

  // Pose the fingers and collect ground truth in chain order.
  PointMatrix joints(chain.joint_count(), 3);
  joints.row(chain.root) = palm_center.transpose();
  std::vector<std::vector<Vec3>> finger_joints;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto posed = pose_finger(specs[i], rng);
    // posed[0] is the base knuckle; annotated joints follow the chain list
    for (std::size_t k = 0; k < fingers[i]->joints.size(); ++k) {
      joints.row(fingers[i]->joints[k]) = posed[std::min(k, posed.size() - 1)].transpose();
    }
    finger_joints.push_back(std::move(posed));
  }

  // Surface sampling, proportional to rough capsule areas.
  std::vector<Vec3> surface;
  surface.reserve(static_cast<std::size_t>(opt.surface_samples) + 512);
  double total_area = 2.0 * kPi * 9.0 * 70.0;  // palm proxy
  std::vector<double> areas;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    double a = 0;
    const auto& pj = finger_joints[i];
    for (std::size_t k = 0; k + 1 < pj.size(); ++k) {
      a += 2.0 * kPi * specs[i].radius_base * (pj[k + 1] - pj[k]).norm();
    }
    a += 2.0 * kPi * specs[i].radius_base * (pj.front() - palm_center).norm() * 0.5;
    areas.push_back(a);
    total_area += a;
  }
  const double palm_share = 2.0 * kPi * 9.0 * 70.0 / total_area;
  sample_ellipsoid(palm_center, palm_half,
                   static_cast<std::int64_t>(palm_share * static_cast<double>(opt.surface_samples)),
                   rng, surface);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& pj = finger_joints[i];
    const auto& s = specs[i];
    const std::int64_t finger_n = static_cast<std::int64_t>(
        areas[i] / total_area * static_cast<double>(opt.surface_samples));
    const std::size_t segs = pj.size() - 1;
    // knuckle-to-palm webbing
    sample_capsule(palm_center + 0.55 * (pj.front() - palm_center), pj.front(),
                   s.radius_base * 1.15, s.radius_base, std::max<std::int64_t>(finger_n / 6, 4),
                   false, rng, surface);
    for (std::size_t k = 0; k < segs; ++k) {
      const double t0 = static_cast<double>(k) / static_cast<double>(segs);
      const double t1 = static_cast<double>(k + 1) / static_cast<double>(segs);
      const double r0 = s.radius_base + t0 * (s.radius_tip - s.radius_base);
      const double r1 = s.radius_base + t1 * (s.radius_tip - s.radius_base);
      sample_capsule(pj[k], pj[k + 1], r0, r1,
                     std::max<std::int64_t>(finger_n / static_cast<std::int64_t>(segs), 6),
                     /*cap_end=*/k + 1 == segs, rng, surface);
    }
  }

  // Global rigid placement in camera space.
  std::uniform_real_distribution<double> yaw(-kPi, kPi);
  std::uniform_real_distribution<double> tilt(-0.7, 0.7);
  std::uniform_real_distribution<double> txy(-30.0, 30.0);
  std::uniform_real_distribution<double> tz(380.0, 600.0);
  const Mat3 r_global = axis_rotation(Vec3(0, 0, 1), yaw(rng)) *
                        axis_rotation(Vec3(1, 0, 0), tilt(rng)) *
                        axis_rotation(Vec3(0, 1, 0), tilt(rng));
  const Vec3 t_global(txy(rng), txy(rng), tz(rng));

  RawHand raw;
  raw.surface_mm.resize(static_cast<Eigen::Index>(surface.size()), 3);
  for (std::size_t i = 0; i < surface.size(); ++i) {
    raw.surface_mm.row(static_cast<Eigen::Index>(i)) =
        (r_global * surface[i] + t_global).transpose();
  }
  raw.joints_mm.resize(joints.rows(), 3);
  for (Eigen::Index i = 0; i < joints.rows(); ++i) {
    raw.joints_mm.row(i) = (r_global * joints.row(i).transpose() + t_global).transpose();
  }
  return raw;
}

std::vector<PointFrame> synth_hands(int count, std::uint64_t seed, const SynthOptions& opt) {
  if (count < 1) throw DimensionError("synth_hands needs count >= 1");
  std::vector<PointFrame> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    out.push_back(synth_hand(derive_seed(seed, static_cast<std::uint64_t>(i)), opt));
  }
  return out;
}

PointFrame synth_hand(std::uint64_t seed, const SynthOptions& opt) {
  RawHand raw = synth_hand_raw(seed, opt);
  return make_point_frame(raw.surface_mm, raw.joints_mm, opt.points,
                          derive_seed(seed, 0xF4A3E), opt.normal_neighbors);
}

}  // namespace handfold
