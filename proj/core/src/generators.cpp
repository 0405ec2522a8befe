// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic task generators. Each task draws a latent, renders every modality
// as a noisy partial view of it, and labels the sample with a deterministic
// function of the full latent. The "world" (projection matrices, templates)
// is fixed per task and independent of the sample seed.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "iotlm/dataset.hpp"
#include "iotlm/encoders.hpp"
#include "iotlm/rng.hpp"

IOTLM_NAMESPACE_BEGIN

namespace {

using MK = ModalityKind;
constexpr double kPi = 3.14159265358979323846;
constexpr std::uint64_t kWorldSeed = 0x10e1a4d5ULL;

struct Draw {
  Rng& rng;
  double ns;  // noise scale
  double noise(double sd) { return rng.normal(0.0, sd * ns); }
};

GridPayload blank_grid(ModalityKind kind) {
  const auto& l = modality_layout(kind);
  GridPayload g;
  g.height = l.dim0;
  g.width = l.dim1;
  g.channels = l.channels;
  g.units = l.units;
  g.values.assign(l.dim0 * l.dim1 * l.channels, Real(0));
  return g;
}

SeqPayload blank_seq(ModalityKind kind) {
  const auto& l = modality_layout(kind);
  SeqPayload s;
  s.steps = l.dim0;
  s.channels = l.dim1;
  s.sample_rate_hz = l.sample_rate_hz;
  s.values.assign(l.dim0 * l.dim1, Real(0));
  return s;
}

Real& at(GridPayload& g, std::size_t y, std::size_t x, std::size_t c = 0) {
  return g.values[(y * g.width + x) * g.channels + c];
}
Real& at(SeqPayload& s, std::size_t t, std::size_t c) { return s.values[t * s.channels + c]; }

void add_noise(GridPayload& g, Draw& d, double sd) {
  for (Real& v : g.values) v += static_cast<Real>(d.noise(sd));
}
void add_noise(SeqPayload& s, Draw& d, double sd) {
  for (Real& v : s.values) v += static_cast<Real>(d.noise(sd));
}
void clamp01(GridPayload& g) {
  for (Real& v : g.values) v = std::clamp(v, Real(0), Real(1));
}

std::vector<Real> one_hot(std::size_t n, std::size_t i) {
  std::vector<Real> v(n, Real(0));
  v[i] = 1;
  return v;
}

/// Nuisance IMU background: gravity on accel z, small random-phase wobble.
void imu_background(SeqPayload& s, Draw& d) {
  const double phase = d.rng.uniform(0, 2 * kPi);
  for (std::size_t t = 0; t < s.steps; ++t) {
    at(s, t, 2) += 1;  // gravity, in g
    for (std::size_t c = 3; c < 6; ++c) {
      at(s, t, c) += static_cast<Real>(0.05 * std::sin(2 * kPi * t / 40.0 + phase + c));
    }
  }
}

/// Fixed smooth patterns for one (task, modality) pair, one per code level.
std::vector<std::vector<Real>> world_patterns(std::size_t task_id, ModalityKind kind,
                                              std::size_t levels, std::size_t size) {
  Rng rng(kWorldSeed + task_id, 1000 + static_cast<std::uint64_t>(kind));
  std::vector<std::vector<Real>> out(levels, std::vector<Real>(size));
  for (auto& p : out) {
    double prev = 0;
    for (auto& v : p) {
      prev = 0.6 * prev + 0.8 * rng.normal();
      v = static_cast<Real>(prev * 0.5);
    }
  }
  return out;
}

struct Generated {
  std::vector<Real> label_block;
  std::map<ModalityKind, std::vector<Real>> views;
};

// ---------------------------------------------------------------------------
// gaze: target point on a 12.8 × 6.4 cm screen.
// Image shows x as a bright column, Depth shows y as a near row, IMU carries
// both through a per-sample drift that does not average out.

Generated gen_gaze(Draw& d, SensorSample& s) {
  const double x = d.rng.uniform(0, 12.8), y = d.rng.uniform(0, 6.4);
  const double bx = d.rng.normal(0, 1.0 * d.ns), by = d.rng.normal(0, 0.6 * d.ns);
  s.target = {static_cast<Real>(x), static_cast<Real>(y)};

  GridPayload img = blank_grid(MK::Image);
  const double col = x / 12.8 * 15.0;
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) at(img, i, j) = static_cast<Real>(std::exp(-0.5 * (j - col) * (j - col)));
  add_noise(img, d, 0.05);
  clamp01(img);

  GridPayload dep = blank_grid(MK::Depth);
  const double row = y / 6.4 * 15.0;
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j)
      at(dep, i, j) = static_cast<Real>(0.6 - 0.2 * std::exp(-0.5 * (i - row) * (i - row)));
  add_noise(dep, d, 0.01);

  SeqPayload imu = blank_seq(MK::IMU);
  imu_background(imu, d);
  const double u = (x + bx) / 12.8 - 0.5, v = (y + by) / 6.4 - 0.5;
  for (std::size_t t = 0; t < imu.steps; ++t) {
    at(imu, t, 6) += static_cast<Real>(u);
    at(imu, t, 7) += static_cast<Real>(v);
  }
  add_noise(imu, d, 0.1);

  s.payloads[MK::Image] = std::move(img);
  s.payloads[MK::Depth] = std::move(dep);
  s.payloads[MK::IMU] = std::move(imu);
  return {{static_cast<Real>(x), static_cast<Real>(y)},
          {{MK::IMU, {static_cast<Real>(x + bx), static_cast<Real>(y + by)}},
           {MK::Image, {static_cast<Real>(x)}},
           {MK::Depth, {static_cast<Real>(y)}}}};
}

// ---------------------------------------------------------------------------
// activity: posture (Image, Pose) × motion level (IMU, Video).

constexpr std::array<std::pair<int, int>, 6> kActivityFactors{{
    {0, 1},  // walking: upright, moderate
    {0, 2},  // running: upright, vigorous
    {0, 3},  // jumping: upright, ballistic
    {1, 0},  // sitting: seated, still
    {1, 1},  // cycling: seated, moderate
    {2, 0},  // lying: horizontal, still
}};
constexpr std::array<double, 4> kMotionAmplitude{0.05, 0.5, 1.0, 1.8};
constexpr std::array<double, 4> kMotionPeriod{32, 25, 14, 20};

void draw_posture(GridPayload& img, int posture, int dy, int dx) {
  auto fill = [&](int r0, int r1, int c0, int c1) {
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const int rr = r + dy, cc = c + dx;
        if (rr >= 0 && rr < 16 && cc >= 0 && cc < 16) at(img, rr, cc) = 1;
      }
  };
  if (posture == 0) {
    fill(1, 14, 7, 8);
  } else if (posture == 1) {
    fill(4, 10, 5, 6);
    fill(10, 11, 5, 11);
    fill(11, 14, 10, 11);
  } else {
    fill(11, 12, 1, 14);
  }
}

Generated gen_activity(Draw& d, SensorSample& s, std::size_t task_id) {
  const auto c = static_cast<std::size_t>(d.rng.below(6));
  const auto [posture, motion] = kActivityFactors[c];
  s.class_id = static_cast<std::int64_t>(c);

  GridPayload img = blank_grid(MK::Image);
  draw_posture(img, posture, static_cast<int>(d.rng.below(3)) - 1, static_cast<int>(d.rng.below(3)) - 1);
  add_noise(img, d, 0.1);
  clamp01(img);

  SeqPayload imu = blank_seq(MK::IMU);
  imu_background(imu, d);
  const double amp = kMotionAmplitude[motion], period = kMotionPeriod[motion];
  const double phase = d.rng.uniform(0, 2 * kPi);
  for (std::size_t t = 0; t < imu.steps; ++t) {
    const double w = std::sin(2 * kPi * t / period + phase);
    at(imu, t, 0) += static_cast<Real>(amp * w);
    at(imu, t, 2) += static_cast<Real>(0.5 * amp * std::abs(w));
    at(imu, t, 4) += static_cast<Real>(0.3 * amp * std::cos(2 * kPi * t / period + phase));
    at(imu, t, 8) += static_cast<Real>(amp * std::abs(w));  // rectified magnitude
  }
  add_noise(imu, d, 0.1);

  GridPayload vid = blank_grid(MK::Video);
  const int speed = motion;
  const int row = 6 + static_cast<int>(d.rng.below(4));
  for (std::size_t f = 0; f < 4; ++f) {
    const int col = 2 + speed * static_cast<int>(f);
    for (int r = row; r < row + 3; ++r)
      for (int cc = col; cc < col + 3 && cc < 16; ++cc) at(vid, r, cc, f) = 1;
  }
  add_noise(vid, d, 0.1);
  clamp01(vid);

  SeqPayload pose = blank_seq(MK::Pose);
  const auto templates = world_patterns(task_id, MK::Pose, 3, 72);
  for (std::size_t i = 0; i < 72; ++i) pose.values[i] = templates[posture][i] * 2;
  add_noise(pose, d, 0.15);

  s.payloads[MK::Image] = std::move(img);
  s.payloads[MK::IMU] = std::move(imu);
  s.payloads[MK::Video] = std::move(vid);
  s.payloads[MK::Pose] = std::move(pose);
  return {one_hot(6, c),
          {{MK::IMU, one_hot(4, motion)},
           {MK::Image, one_hot(3, posture)},
           {MK::Video, one_hot(4, motion)},
           {MK::Pose, one_hot(3, posture)}}};
}

// ---------------------------------------------------------------------------
// depth: planar scene d(i, j) = b + gx (j - 7.5) + gy (i - 7.5) in mm.
// Image shades with gx, GPS carries b, IMU and camera pitch carry gy, LiDAR
// sees everything through a per-sample calibration error.

Generated gen_depth(Draw& d, SensorSample& s) {
  const double b = d.rng.uniform(900, 1500), gx = d.rng.uniform(-20, 20), gy = d.rng.uniform(-20, 20);
  s.target.resize(256);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j)
      s.target[i * 16 + j] = static_cast<Real>(b + gx * (j - 7.5) + gy * (i - 7.5));

  GridPayload img = blank_grid(MK::Image);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) at(img, i, j) = static_cast<Real>(0.5 + gx / 45.0 * (j - 7.5) / 7.5);
  add_noise(img, d, 0.05);
  clamp01(img);

  SeqPayload gps = blank_seq(MK::GPS);
  for (std::size_t t = 0; t < gps.steps; ++t) {
    at(gps, t, 2) = static_cast<Real>((b - 1200) / 300);
    at(gps, t, 5) = 1;
  }
  add_noise(gps, d, 0.1);

  SeqPayload imu = blank_seq(MK::IMU);
  imu_background(imu, d);
  for (std::size_t t = 0; t < imu.steps; ++t) at(imu, t, 7) += static_cast<Real>(gy / 20);
  add_noise(imu, d, 0.1);

  SeqPayload cam = blank_seq(MK::CameraMeta);
  cam.values = {1, static_cast<Real>(gy / 20), Real(0.8), Real(0.5), Real(0.5), 0, 0, 1};
  add_noise(cam, d, 0.05);

  const double eb = d.rng.normal(0, 60 * d.ns), egx = d.rng.normal(0, 5 * d.ns), egy = d.rng.normal(0, 5 * d.ns);
  SeqPayload lidar = blank_seq(MK::LiDAR);
  for (std::size_t k = 0; k < 64; ++k) {
    const double i = static_cast<double>(k / 8) * 2 + 0.5, j = static_cast<double>(k % 8) * 2 + 0.5;
    const double z = (b + eb) + (gx + egx) * (j - 7.5) + (gy + egy) * (i - 7.5);
    at(lidar, k, 0) = static_cast<Real>(j / 15);
    at(lidar, k, 1) = static_cast<Real>(i / 15);
    at(lidar, k, 2) = static_cast<Real>(z / 1000);
    at(lidar, k, 3) = Real(0.5);
  }
  add_noise(lidar, d, 0.02);

  s.payloads[MK::Image] = std::move(img);
  s.payloads[MK::GPS] = std::move(gps);
  s.payloads[MK::IMU] = std::move(imu);
  s.payloads[MK::CameraMeta] = std::move(cam);
  s.payloads[MK::LiDAR] = std::move(lidar);
  auto r = [](double v) { return static_cast<Real>(v); };
  return {{r(b), r(gx), r(gy)},
          {{MK::IMU, {r(gy)}},
           {MK::Image, {r(gx)}},
           {MK::GPS, {r(b)}},
           {MK::LiDAR, {r(b + eb), r(gx + egx), r(gy + egy)}},
           {MK::CameraMeta, {r(gy)}}}};
}

// ---------------------------------------------------------------------------
// event: audio group (c / 2) sets the spike period, IMU group (c % 2) the
// hand motion style. Class 7 is "other".

constexpr std::array<std::size_t, 4> kSpikePeriod{2, 3, 4, 5};
constexpr std::array<std::size_t, 4> kSpikeBand{2, 5, 8, 11};

Generated gen_event(Draw& d, SensorSample& s) {
  const auto c = static_cast<std::size_t>(d.rng.below(8));
  const std::size_t a = c / 2, m = c % 2;
  s.class_id = static_cast<std::int64_t>(c);

  GridPayload spec = blank_grid(MK::Audio);  // rows = frequency bins, cols = frames
  for (std::size_t f = 0; f < 16; ++f)
    for (std::size_t t = 0; t < 16; ++t) at(spec, f, t) = static_cast<Real>(0.2 - 0.01 * f);
  for (std::size_t t = 0; t < 16; t += kSpikePeriod[a]) {
    for (std::size_t f = kSpikeBand[a]; f < kSpikeBand[a] + 4; ++f) at(spec, f, t) += 1;
  }
  add_noise(spec, d, 0.08);

  SeqPayload imu = blank_seq(MK::IMU);
  imu_background(imu, d);
  const double phase = d.rng.uniform(0, 2 * kPi);
  for (std::size_t t = 0; t < imu.steps; ++t) {
    if (m == 0) {
      // impulsive taps
      if (t % 16 < 2) at(imu, t, 0) += 1.5;
      at(imu, t, 6) += Real(0.5);
    } else {
      // sustained rubbing
      at(imu, t, 1) += static_cast<Real>(0.6 * std::sin(2 * kPi * t / 8.0 + phase));
      at(imu, t, 7) += Real(0.5);
    }
  }
  add_noise(imu, d, 0.1);

  s.payloads[MK::Audio] = std::move(spec);
  s.payloads[MK::IMU] = std::move(imu);
  return {one_hot(8, c), {{MK::IMU, one_hot(2, m)}, {MK::Audio, one_hot(4, a)}}};
}

// ---------------------------------------------------------------------------
// gesture: gaze motion axis × head rotation axis.

constexpr std::array<std::pair<int, int>, 5> kGestureFactors{{
    {0, 0},  // nod: vertical gaze, pitch
    {1, 0},  // shake: horizontal gaze, pitch
    {0, 1},  // lean: vertical gaze, roll
    {1, 1},  // roll: horizontal gaze, roll
    {2, 2},  // idle
}};

Generated gen_gesture(Draw& d, SensorSample& s) {
  const auto c = static_cast<std::size_t>(d.rng.below(5));
  const auto [g, h] = kGestureFactors[c];
  s.class_id = static_cast<std::int64_t>(c);

  SeqPayload gaze = blank_seq(MK::Gaze);
  const double jitter = d.rng.normal(0, 0.2 * d.ns);
  for (std::size_t t = 0; t < gaze.steps; ++t) {
    const double w = 0.5 * std::sin(2 * kPi * t / 16.0 + jitter);
    if (g == 0) at(gaze, t, 1) += static_cast<Real>(w);
    if (g == 1) at(gaze, t, 0) += static_cast<Real>(w);
  }
  add_noise(gaze, d, 0.05);

  SeqPayload imu = blank_seq(MK::IMU);
  imu_background(imu, d);
  const double phase = d.rng.uniform(0, 2 * kPi);
  for (std::size_t t = 0; t < imu.steps; ++t) {
    const double w = std::sin(2 * kPi * t / 20.0 + phase);
    if (h == 0) at(imu, t, 3) += static_cast<Real>(0.8 * w);
    if (h == 1) at(imu, t, 5) += static_cast<Real>(0.8 * w);
    if (h < 2) at(imu, t, 6 + h) += Real(0.5);
  }
  add_noise(imu, d, 0.1);

  s.payloads[MK::Gaze] = std::move(gaze);
  s.payloads[MK::IMU] = std::move(imu);
  return {one_hot(5, c),
          {{MK::IMU, one_hot(3, static_cast<std::size_t>(h))},
           {MK::Gaze, one_hot(3, static_cast<std::size_t>(g))}}};
}

// ---------------------------------------------------------------------------
// pose: 72 joint angles = A θ for six body parameters. Image shows θ0..2,
// IMU θ3..5, Thermal θ0..1.

Generated gen_pose(Draw& d, SensorSample& s, std::size_t task_id) {
  std::array<double, 6> th{};
  for (double& v : th) v = d.rng.uniform(-1, 1);
  Rng world(kWorldSeed + task_id, 7);
  s.target.assign(72, Real(0));
  for (std::size_t i = 0; i < 72; ++i) {
    double acc = 0;
    for (std::size_t k = 0; k < 6; ++k) acc += world.normal(0, 0.35) * th[k];
    s.target[i] = static_cast<Real>(acc);
  }

  GridPayload img = blank_grid(MK::Image);
  for (std::size_t i = 0; i < 16; ++i) {
    const std::size_t band = std::min<std::size_t>(i / 5, 2);
    for (std::size_t j = 0; j < 16; ++j) at(img, i, j) = static_cast<Real>(0.5 + 0.4 * th[band]);
  }
  add_noise(img, d, 0.05);
  clamp01(img);

  SeqPayload imu = blank_seq(MK::IMU);
  imu_background(imu, d);
  for (std::size_t t = 0; t < imu.steps; ++t)
    for (std::size_t k = 0; k < 3; ++k) at(imu, t, 6 + k) += static_cast<Real>(th[3 + k]);
  add_noise(imu, d, 0.1);

  GridPayload thermal = blank_grid(MK::Thermal);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) at(thermal, i, j) = static_cast<Real>(0.5 + 0.3 * th[j < 4 ? 0 : 1]);
  add_noise(thermal, d, 0.1);

  s.payloads[MK::Image] = std::move(img);
  s.payloads[MK::IMU] = std::move(imu);
  s.payloads[MK::Thermal] = std::move(thermal);
  auto r = [](double v) { return static_cast<Real>(v); };
  return {{r(th[0]), r(th[1]), r(th[2]), r(th[3]), r(th[4]), r(th[5])},
          {{MK::IMU, {r(th[3]), r(th[4]), r(th[5])}},
           {MK::Image, {r(th[0]), r(th[1]), r(th[2])}},
           {MK::Thermal, {r(th[0]), r(th[1])}}}};
}

// ---------------------------------------------------------------------------
// recon3d: 21 hand joints (mm) = template + B φ. Image shows φ0..1,
// Depth φ2..3, Capacitance φ4..5.

Generated gen_recon3d(Draw& d, SensorSample& s, std::size_t task_id) {
  std::array<double, 6> ph{};
  for (double& v : ph) v = d.rng.uniform(-1, 1);
  Rng world(kWorldSeed + task_id, 9);
  s.target.assign(63, Real(0));
  for (std::size_t i = 0; i < 63; ++i) {
    double acc = world.normal(0, 40);
    for (std::size_t k = 0; k < 6; ++k) acc += world.normal(0, 12) * ph[k];
    s.target[i] = static_cast<Real>(acc);
  }

  GridPayload img = blank_grid(MK::Image);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) at(img, i, j) = static_cast<Real>(0.5 + 0.4 * ph[j < 8 ? 0 : 1]);
  add_noise(img, d, 0.05);
  clamp01(img);

  GridPayload dep = blank_grid(MK::Depth);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) at(dep, i, j) = static_cast<Real>(0.3 + 0.05 * ph[i < 8 ? 2 : 3]);
  add_noise(dep, d, 0.005);

  GridPayload cap = blank_grid(MK::Capacitance);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 8; ++j) at(cap, i, j) = static_cast<Real>(0.5 + 0.4 * ph[i < 8 ? 4 : 5]);
  add_noise(cap, d, 0.05);

  s.payloads[MK::Image] = std::move(img);
  s.payloads[MK::Depth] = std::move(dep);
  s.payloads[MK::Capacitance] = std::move(cap);
  auto r = [](double v) { return static_cast<Real>(v); };
  return {{r(ph[0]), r(ph[1]), r(ph[2]), r(ph[3]), r(ph[4]), r(ph[5])},
          {{MK::Image, {r(ph[0]), r(ph[1])}},
           {MK::Depth, {r(ph[2]), r(ph[3])}},
           {MK::Capacitance, {r(ph[4]), r(ph[5])}}}};
}

// ---------------------------------------------------------------------------
// touch: contact pattern (Capacitance sharp, Image blurred) × press state
// (Depth, Pose).

constexpr std::array<std::array<double, 3>, 7> kContact{{
    {12, 1, 1.0},   // thumb
    {3, 2, 1.0},    // index
    {2, 4, 1.0},    // middle
    {3, 6, 1.0},    // ring
    {5, 7, 1.0},    // pinky
    {2.5, 3, 1.6},  // two fingers
    {9, 4, 2.6},    // palm
}};

Generated gen_touch(Draw& d, SensorSample& s, std::size_t task_id) {
  const auto c = static_cast<std::size_t>(d.rng.below(14));
  const std::size_t k = c / 2, st = c % 2;
  s.class_id = static_cast<std::int64_t>(c);
  const auto [cy, cx, sig] = kContact[k];

  GridPayload cap = blank_grid(MK::Capacitance);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      const double r2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
      at(cap, i, j) = static_cast<Real>(std::exp(-0.5 * r2 / (sig * sig)));
    }
  add_noise(cap, d, 0.05);

  GridPayload img = blank_grid(MK::Image);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) {
      const double dy = i - cy, dx = j / 2.0 - cx;
      at(img, i, j) = static_cast<Real>(0.8 * std::exp(-0.5 * (dy * dy + dx * dx) / (sig * sig + 1)));
    }
  add_noise(img, d, 0.1);
  clamp01(img);

  GridPayload dep = blank_grid(MK::Depth);
  for (Real& v : dep.values) v = static_cast<Real>(st ? 0.01 : 0.03);
  add_noise(dep, d, 0.004);

  SeqPayload pose = blank_seq(MK::Pose);
  const auto templates = world_patterns(task_id, MK::Pose, 2, 72);
  for (std::size_t i = 0; i < 72; ++i) pose.values[i] = templates[st][i];
  add_noise(pose, d, 0.2);

  s.payloads[MK::Capacitance] = std::move(cap);
  s.payloads[MK::Image] = std::move(img);
  s.payloads[MK::Depth] = std::move(dep);
  s.payloads[MK::Pose] = std::move(pose);
  return {one_hot(14, c),
          {{MK::Image, one_hot(7, k)},
           {MK::Depth, one_hot(2, st)},
           {MK::Capacitance, one_hot(7, k)},
           {MK::Pose, one_hot(2, st)}}};
}

Generated generate_one(const TaskSpec& spec, Draw& d, SensorSample& s) {
  const std::string& n = spec.name;
  if (n == "gaze") return gen_gaze(d, s);
  if (n == "activity") return gen_activity(d, s, spec.id);
  if (n == "depth") return gen_depth(d, s);
  if (n == "event") return gen_event(d, s);
  if (n == "gesture") return gen_gesture(d, s);
  if (n == "pose") return gen_pose(d, s, spec.id);
  if (n == "recon3d") return gen_recon3d(d, s, spec.id);
  if (n == "touch") return gen_touch(d, s, spec.id);
  throw ConfigError("no generator for task '" + n + "'");
}

std::map<std::string, std::map<ModalityKind, std::size_t>> view_sizes() {
  return {
      {"gaze", {{MK::IMU, 2}, {MK::Image, 1}, {MK::Depth, 1}}},
      {"activity", {{MK::IMU, 4}, {MK::Image, 3}, {MK::Video, 4}, {MK::Pose, 3}}},
      {"depth", {{MK::IMU, 1}, {MK::Image, 1}, {MK::GPS, 1}, {MK::LiDAR, 3}, {MK::CameraMeta, 1}}},
      {"event", {{MK::IMU, 2}, {MK::Audio, 4}}},
      {"gesture", {{MK::IMU, 3}, {MK::Gaze, 3}}},
      {"pose", {{MK::IMU, 3}, {MK::Image, 3}, {MK::Thermal, 2}}},
      {"recon3d", {{MK::Image, 2}, {MK::Depth, 2}, {MK::Capacitance, 2}}},
      {"touch", {{MK::Image, 7}, {MK::Depth, 2}, {MK::Capacitance, 7}, {MK::Pose, 2}}},
  };
}

std::size_t label_block_size(const TaskSpec& spec) {
  if (spec.is_classification()) return spec.out_dim;
  if (spec.name == "gaze") return 2;
  if (spec.name == "depth") return 3;
  return 6;
}

}  // namespace

LatentLayout latent_layout(const TaskSpec& spec) {
  const auto all = view_sizes();
  auto it = all.find(spec.name);
  if (it == all.end()) throw ConfigError("no generator for task '" + spec.name + "'");
  LatentLayout l;
  l.label_dims = label_block_size(spec);
  std::size_t offset = l.label_dims;
  for (const auto& [kind, size] : it->second) {
    l.views.push_back({kind, offset, size});
    offset += size;
  }
  l.total = offset;
  return l;
}

std::vector<SensorSample> gen_task_data(const TaskRegistry& registry, const std::string& task,
                                        std::size_t n, std::uint64_t seed, double noise_scale) {
  const TaskSpec& spec = registry.get(task);
  if (n == 0) throw ConfigError("gen_task_data: n must be at least 1");
  if (!(noise_scale >= 0)) throw ConfigError("noise scale must be non-negative");
  const LatentLayout layout = latent_layout(spec);
  std::vector<SensorSample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed, (static_cast<std::uint64_t>(spec.id + 1) << 40) + i);
    Draw d{rng, noise_scale};
    SensorSample& s = out[i];
    s.sample_id = (static_cast<std::uint64_t>(spec.id) << 32) | i;
    s.task_id = spec.id;
    Generated g = generate_one(spec, d, s);
    s.latent = std::move(g.label_block);
    for (const auto& v : layout.views) {
      const auto& view = g.views.at(v.kind);
      if (view.size() != v.size) throw ContractError("generator view size mismatch for " + spec.name);
      s.latent.insert(s.latent.end(), view.begin(), view.end());
    }
    for (const auto& [kind, payload] : s.payloads) {
      if (!spec.uses(kind)) throw ContractError("generator emitted a foreign modality for " + spec.name);
      std::visit([](const auto& p) { p.validate(); }, payload);
    }
  }
  return out;
}

void strip_latents(std::vector<SensorSample>& samples) {
  for (auto& s : samples) s.latent.clear();
}

// ---------------------------------------------------------------------------
// Least-squares oracle

namespace {

// Solves (XᵀX + λI) B = XᵀY by Cholesky; returns B (p×q).
std::vector<double> ridge_solve(const std::vector<double>& x, const std::vector<double>& y,
                                std::size_t n, std::size_t p, std::size_t q) {
  std::vector<double> a(p * p, 0.0), b(p * q, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < p; ++i) {
      const double xi = x[r * p + i];
      for (std::size_t j = 0; j < p; ++j) a[i * p + j] += xi * x[r * p + j];
      for (std::size_t k = 0; k < q; ++k) b[i * q + k] += xi * y[r * q + k];
    }
  }
  double trace = 0;
  for (std::size_t i = 0; i < p; ++i) trace += a[i * p + i];
  const double lambda = 1e-10 * (trace / static_cast<double>(p) + 1.0);
  for (std::size_t i = 0; i < p; ++i) a[i * p + i] += lambda;
  // Cholesky a = L Lᵀ in place (lower triangle).
  for (std::size_t j = 0; j < p; ++j) {
    double diag = a[j * p + j];
    for (std::size_t k = 0; k < j; ++k) diag -= a[j * p + k] * a[j * p + k];
    if (diag <= 0) throw NumericError("least squares: matrix not positive definite");
    a[j * p + j] = std::sqrt(diag);
    for (std::size_t i = j + 1; i < p; ++i) {
      double v = a[i * p + j];
      for (std::size_t k = 0; k < j; ++k) v -= a[i * p + k] * a[j * p + k];
      a[i * p + j] = v / a[j * p + j];
    }
  }
  for (std::size_t k = 0; k < q; ++k) {
    for (std::size_t i = 0; i < p; ++i) {
      double v = b[i * q + k];
      for (std::size_t m = 0; m < i; ++m) v -= a[i * p + m] * b[m * q + k];
      b[i * q + k] = v / a[i * p + i];
    }
    for (std::size_t ii = p; ii-- > 0;) {
      double v = b[ii * q + k];
      for (std::size_t m = ii + 1; m < p; ++m) v -= a[m * p + ii] * b[m * q + k];
      b[ii * q + k] = v / a[ii * p + ii];
    }
  }
  return b;
}

}  // namespace

double latent_least_squares_mse(const TaskSpec& spec, std::span<const SensorSample> samples,
                                std::optional<ModalityKind> view) {
  if (samples.empty()) throw ContractError("least squares on an empty sample set");
  const LatentLayout layout = latent_layout(spec);
  std::size_t offset = 0, size = layout.total;
  if (view) {
    auto it = std::find_if(layout.views.begin(), layout.views.end(),
                           [&](const LatentLayout::View& v) { return v.kind == *view; });
    if (it == layout.views.end()) {
      throw ConfigError("task '" + spec.name + "' has no view for modality " +
                        std::string(modality_name(*view)));
    }
    offset = it->offset;
    size = it->size;
  }
  const std::size_t n = samples.size(), p = size + 1, q = spec.out_dim;
  std::vector<double> x(n * p), y(n * q, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& s = samples[r];
    if (s.latent.size() != layout.total) throw DataError("sample latent missing or malformed");
    for (std::size_t j = 0; j < size; ++j) x[r * p + j] = s.latent[offset + j];
    x[r * p + size] = 1.0;
    if (spec.is_classification()) {
      y[r * q + static_cast<std::size_t>(s.class_id)] = 1.0;
    } else {
      const auto t = normalize_target(spec, s.target);
      for (std::size_t k = 0; k < q; ++k) y[r * q + k] = t[k];
    }
  }
  const auto b = ridge_solve(x, y, n, p, q);
  double sse = 0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < q; ++k) {
      double pred = 0;
      for (std::size_t j = 0; j < p; ++j) pred += x[r * p + j] * b[j * q + k];
      sse += (pred - y[r * q + k]) * (pred - y[r * q + k]);
    }
  }
  return sse / static_cast<double>(n * q);
}

IOTLM_NAMESPACE_END
