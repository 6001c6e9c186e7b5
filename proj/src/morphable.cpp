#include "mva/morphable.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "mva/errors.hpp"
#include "mva/rng.hpp"

namespace mva {

namespace {

struct Affine {
  Mat3 a;
  Vec3 b;
  Vec3 apply(const Vec3& v) const { return a * v + b; }
};

Affine joint_local(const Joint& joint, const Vec3& theta) {
  const Mat3 r = rotation_from_axis_angle(theta);
  return {r, joint.pivot - r * joint.pivot};
}

// World transform of each joint with parent composition (jaw under neck).
std::vector<Affine> chain_transforms(const MorphableModel& model, const std::vector<Vec3>& theta) {
  std::vector<Affine> world(model.joints.size());
  for (size_t j = 0; j < model.joints.size(); ++j) {
    const Joint& joint = model.joints[j];
    if (joint.parent >= static_cast<int>(j))
      throw ValidationError("joint parents must precede children");
    Affine local = joint_local(joint, theta[j]);
    if (joint.parent < 0) {
      world[j] = local;
    } else {
      const Affine& p = world[static_cast<size_t>(joint.parent)];
      world[j] = {p.a * local.a, p.a * local.b + p.b};
    }
  }
  return world;
}

double uv_tri_area2(const Vec2& a, const Vec2& b, const Vec2& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

}  // namespace

void MorphableModel::validate() const {
  const int n = num_vertices();
  if (static_cast<int>(uv.size()) != n) throw ValidationError("model: uv count != vertex count");
  if (static_cast<int>(skin_weights.size()) != n)
    throw ValidationError("model: skin weight rows != vertex count");
  for (const auto& basis : expr_basis)
    if (static_cast<int>(basis.size()) != n)
      throw ValidationError("model: blendshape size != vertex count");
  for (const auto& t : triangles)
    for (int i : t)
      if (i < 0 || i >= n) throw ValidationError("model: triangle index out of range");
  for (const auto& p : uv)
    if (p.x < -1e-9 || p.x > 1 + 1e-9 || p.y < -1e-9 || p.y > 1 + 1e-9)
      throw ValidationError("model: uv outside [0,1]");
  for (const auto& row : skin_weights) {
    if (row.size() != joints.size()) throw ValidationError("model: skin weight row arity");
    double sum = 0;
    for (double w : row) {
      if (w < -1e-12 || w > 1 + 1e-12) throw ValidationError("model: skin weight outside [0,1]");
      sum += w;
    }
    if (sum > 1 + 1e-9) throw ValidationError("model: skin weight row sums above 1");
  }
  for (size_t t = 0; t < triangles.size(); ++t) {
    const auto& tri = triangles[t];
    const double a2 = std::abs(uv_tri_area2(uv[static_cast<size_t>(tri[0])], uv[static_cast<size_t>(tri[1])],
                                            uv[static_cast<size_t>(tri[2])]));
    if (a2 <= 1e-14)
      throw ValidationError("model: degenerate UV triangle " + std::to_string(t));
  }
}

uint64_t MorphableModel::hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](const void* p, size_t len) {
    const unsigned char* c = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < len; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ull;
    }
  };
  auto feed_d = [&](double v) { feed(&v, sizeof v); };
  for (const auto& v : base_vertices) {
    feed_d(v.x);
    feed_d(v.y);
    feed_d(v.z);
  }
  for (const auto& t : triangles) feed(t.data(), sizeof(int) * 3);
  for (const auto& p : uv) {
    feed_d(p.x);
    feed_d(p.y);
  }
  for (const auto& basis : expr_basis)
    for (const auto& v : basis) {
      feed_d(v.x);
      feed_d(v.y);
      feed_d(v.z);
    }
  for (const auto& j : joints) {
    feed(j.name.data(), j.name.size());
    feed_d(j.pivot.x);
    feed_d(j.pivot.y);
    feed_d(j.pivot.z);
    feed(&j.parent, sizeof j.parent);
  }
  for (const auto& row : skin_weights)
    for (double w : row) feed_d(w);
  return h;
}

void validate_frame_params(const MorphableModel& model, const std::vector<double>& psi,
                           const std::vector<Vec3>& theta) {
  for (double p : psi)
    if (std::abs(p) > model.psi_max)
      throw ValidationError("frame params: |psi| exceeds psi_max=" + std::to_string(model.psi_max));
  for (const Vec3& t : theta)
    if (norm(t) > M_PI + 1e-9)
      throw ValidationError("frame params: joint angle exceeds pi");
}

std::vector<Vec3> evaluate_mesh(const MorphableModel& model, const std::vector<double>& psi,
                                const std::vector<Vec3>& theta) {
  if (static_cast<int>(psi.size()) != model.num_expressions())
    throw ValidationError("evaluate_mesh: expression code length " + std::to_string(psi.size()) +
                          " != K=" + std::to_string(model.num_expressions()));
  if (static_cast<int>(theta.size()) != model.num_joints())
    throw ValidationError("evaluate_mesh: pose length " + std::to_string(theta.size()) +
                          " != J=" + std::to_string(model.num_joints()));

  const int n = model.num_vertices();
  std::vector<Vec3> shaped(model.base_vertices);
  for (size_t k = 0; k < psi.size(); ++k) {
    const double c = psi[k];
    if (c == 0.0) continue;
    const auto& basis = model.expr_basis[k];
    for (int i = 0; i < n; ++i) shaped[static_cast<size_t>(i)] += basis[static_cast<size_t>(i)] * c;
  }

  bool identity_pose = true;
  for (const Vec3& t : theta)
    identity_pose = identity_pose && t.x == 0.0 && t.y == 0.0 && t.z == 0.0;
  if (identity_pose) return shaped;  // keeps the neutral configuration bit-exact

  const std::vector<Affine> world = chain_transforms(model, theta);
  std::vector<Vec3> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Vec3& v = shaped[static_cast<size_t>(i)];
    const auto& w = model.skin_weights[static_cast<size_t>(i)];
    double rest = 1.0;
    Vec3 acc{0, 0, 0};
    for (size_t j = 0; j < w.size(); ++j) {
      if (w[j] == 0.0) continue;
      acc += world[j].apply(v) * w[j];
      rest -= w[j];
    }
    out[static_cast<size_t>(i)] = acc + v * rest;
  }
  return out;
}

std::vector<Vec3> displacements(const MorphableModel& model, const std::vector<double>& psi,
                                const std::vector<Vec3>& theta) {
  std::vector<Vec3> posed = evaluate_mesh(model, psi, theta);
  const std::vector<Vec3> neutral =
      evaluate_mesh(model, std::vector<double>(psi.size(), 0.0), std::vector<Vec3>(theta.size()));
  for (size_t i = 0; i < posed.size(); ++i) posed[i] = posed[i] - neutral[i];
  return posed;
}

NeckNormalized neck_normalize(const std::vector<Vec3>& vertices, const Camera& camera,
                              const Vec3& theta_neck, const MorphableModel& model) {
  if (model.joints.empty()) throw ValidationError("neck_normalize: model has no joints");
  const Vec3 pivot = model.joints[0].pivot;
  const Mat3 r = rotation_from_axis_angle(theta_neck);
  const Mat3 rinv = r.transposed();

  NeckNormalized out;
  out.vertices.resize(vertices.size());
  for (size_t i = 0; i < vertices.size(); ++i)
    out.vertices[i] = rinv * (vertices[i] - pivot) + pivot;

  // x_cam = Rc * x + tc with x = R(y - p) + p gives Rc' = Rc R and
  // tc' = Rc (p - R p) + tc.
  out.camera = camera;
  out.camera.rotation = camera.rotation * r;
  out.camera.translation = camera.rotation * (pivot - r * pivot) + camera.translation;
  return out;
}

MorphableModel synth_model(uint64_t seed, int target_vertices, int num_blendshapes) {
  if (target_vertices < 64)
    throw ValidationError("synth_model: need at least 64 vertices for the tessellation");
  if (num_blendshapes < 2 || num_blendshapes > 8)
    throw ValidationError("synth_model: blendshape count must be in [2, 8]");

  Rng rng(seed);
  Rng shape_rng = rng.fork("shape");
  Rng bump_rng = rng.fork("bumps");

  const int rows = std::max(4, static_cast<int>(std::lround(std::sqrt(target_vertices / 2.0))));
  const int cols = std::max(5, target_vertices / rows);
  const int n = rows * cols;

  // head-like ellipsoid, +y up, face toward +z
  const double rx = 0.090 * (1.0 + 0.08 * (shape_rng.uniform() - 0.5));
  const double ry = 0.115 * (1.0 + 0.08 * (shape_rng.uniform() - 0.5));
  const double rz = 0.100 * (1.0 + 0.08 * (shape_rng.uniform() - 0.5));
  const double head_radius = std::max({rx, ry, rz});

  struct Bump {
    Vec3 dir;
    double amp, width;
  };
  std::vector<Bump> bumps;
  for (int i = 0; i < 3; ++i) {
    Vec3 d{bump_rng.normal(), bump_rng.normal(), bump_rng.normal()};
    bumps.push_back({normalized(d), 0.05 * bump_rng.uniform(0.3, 1.0), bump_rng.uniform(0.4, 0.8)});
  }

  MorphableModel model;
  model.base_vertices.resize(static_cast<size_t>(n));
  model.uv.resize(static_cast<size_t>(n));

  auto sphere_dir = [](double u, double v) {
    const double polar = v * M_PI;
    const double az = u * 2.0 * M_PI;
    return Vec3{std::sin(polar) * std::sin(az), std::cos(polar), std::sin(polar) * std::cos(az)};
  };

  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double u = static_cast<double>(j) / (cols - 1);
      const double v = static_cast<double>(i) / (rows - 1);
      const Vec3 d = sphere_dir(u, v);
      double radial = 1.0;
      for (const Bump& b : bumps) {
        const double ang = std::acos(std::clamp(dot(d, b.dir), -1.0, 1.0));
        radial += b.amp * std::exp(-ang * ang / (2 * b.width * b.width));
      }
      const size_t idx = static_cast<size_t>(i) * cols + j;
      model.base_vertices[idx] = Vec3{rx * d.x, ry * d.y, rz * d.z} * radial;
      model.uv[idx] = Vec2{u, v};
    }
  }

  for (int i = 0; i + 1 < rows; ++i) {
    for (int j = 0; j + 1 < cols; ++j) {
      const int v00 = i * cols + j, v01 = i * cols + j + 1;
      const int v10 = (i + 1) * cols + j, v11 = (i + 1) * cols + j + 1;
      model.triangles.push_back({v00, v10, v11});
      model.triangles.push_back({v00, v11, v01});
    }
  }

  // localized blendshapes; the first is the brow shape that pairs with the
  // expression-dependent texture band
  const Vec3 kCenters[] = {
      normalized(Vec3{0.0, 0.55, 0.80}),   // brow / forehead
      normalized(Vec3{0.0, -0.55, 0.80}),  // jaw / chin
      normalized(Vec3{-0.80, 0.0, 0.55}),  // left cheek
      normalized(Vec3{0.80, 0.0, 0.55}),   // right cheek
      normalized(Vec3{0.0, -0.20, 0.97}),  // lips
      normalized(Vec3{0.0, 0.80, 0.55}),   // crown
      normalized(Vec3{-0.85, 0.35, 0.30}), // left temple
      normalized(Vec3{0.85, 0.35, 0.30}),  // right temple
  };
  const double kWidth = 0.55;
  const double kAmp = 0.15 * head_radius;
  model.expr_basis.resize(static_cast<size_t>(num_blendshapes));
  for (int k = 0; k < num_blendshapes; ++k) {
    auto& basis = model.expr_basis[static_cast<size_t>(k)];
    basis.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const Vec3 d = normalized(model.base_vertices[static_cast<size_t>(i)]);
      const double ang = std::acos(std::clamp(dot(d, kCenters[k]), -1.0, 1.0));
      const double env = std::exp(-ang * ang / (2 * kWidth * kWidth));
      basis[static_cast<size_t>(i)] = d * (kAmp * env);
    }
  }

  model.joints.push_back({"neck", Vec3{0, -1.5 * ry, 0}, -1});
  model.joints.push_back({"jaw", Vec3{0, -0.25 * ry, 0.15 * rz}, 0});

  auto logistic = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  model.skin_weights.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Vec3& p = model.base_vertices[static_cast<size_t>(i)];
    const double wy = logistic((-(p.y / ry) - 0.15) / 0.12);
    const double wz = logistic(((p.z / rz) - 0.10) / 0.15);
    double w_jaw = std::clamp(wy * wz, 0.0, 1.0);
    if (w_jaw < 1e-3) w_jaw = 0.0;  // keep a truly rigid neck-bound subset
    if (w_jaw > 1.0 - 1e-3) w_jaw = 1.0;
    model.skin_weights[static_cast<size_t>(i)] = {1.0 - w_jaw, w_jaw};
  }

  model.validate();
  return model;
}

namespace {
constexpr int kModelFormatVersion = 1;
}

void save_model(const MorphableModel& model, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;
  j["psi_max"] = model.psi_max;
  auto& bv = j["base_vertices"] = nlohmann::json::array();
  for (const auto& v : model.base_vertices) bv.push_back({v.x, v.y, v.z});
  auto& tr = j["triangles"] = nlohmann::json::array();
  for (const auto& t : model.triangles) tr.push_back({t[0], t[1], t[2]});
  auto& uv = j["uv"] = nlohmann::json::array();
  for (const auto& p : model.uv) uv.push_back({p.x, p.y});
  auto& eb = j["expr_basis"] = nlohmann::json::array();
  for (const auto& basis : model.expr_basis) {
    nlohmann::json bj = nlohmann::json::array();
    for (const auto& v : basis) bj.push_back({v.x, v.y, v.z});
    eb.push_back(std::move(bj));
  }
  auto& js = j["joints"] = nlohmann::json::array();
  for (const auto& joint : model.joints)
    js.push_back({{"name", joint.name},
                  {"pivot", {joint.pivot.x, joint.pivot.y, joint.pivot.z}},
                  {"parent", joint.parent}});
  j["skin_weights"] = model.skin_weights;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file: " + path);
  out << j.dump();
  if (!out) throw IoError("failed writing model file: " + path);
}

MorphableModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("model file is not valid JSON: " + std::string(e.what()));
  }
  if (!j.contains("format_version") || j["format_version"].get<int>() != kModelFormatVersion)
    throw ValidationError("model file format version mismatch");

  MorphableModel model;
  model.psi_max = j.value("psi_max", 3.0);
  for (const auto& v : j.at("base_vertices"))
    model.base_vertices.push_back({v[0].get<double>(), v[1].get<double>(), v[2].get<double>()});
  for (const auto& t : j.at("triangles"))
    model.triangles.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<int>()});
  for (const auto& p : j.at("uv")) model.uv.push_back({p[0].get<double>(), p[1].get<double>()});
  for (const auto& bj : j.at("expr_basis")) {
    std::vector<Vec3> basis;
    for (const auto& v : bj) basis.push_back({v[0].get<double>(), v[1].get<double>(), v[2].get<double>()});
    model.expr_basis.push_back(std::move(basis));
  }
  for (const auto& joint : j.at("joints")) {
    const auto& pv = joint.at("pivot");
    model.joints.push_back({joint.at("name").get<std::string>(),
                            Vec3{pv[0].get<double>(), pv[1].get<double>(), pv[2].get<double>()},
                            joint.at("parent").get<int>()});
  }
  model.skin_weights = j.at("skin_weights").get<std::vector<std::vector<double>>>();
  model.validate();
  return model;
}

bool uv_triangles_disjoint(const MorphableModel& model, std::string* message) {
  // SAT over the 6 edge normals; shared edges and vertices are allowed, so
  // overlap must exceed eps on every axis to count.
  const double eps = 1e-12;
  auto overlaps = [&](const std::array<Vec2, 3>& a, const std::array<Vec2, 3>& b) {
    const std::array<Vec2, 3>* tris[2] = {&a, &b};
    for (const auto* tri : tris) {
      for (int e = 0; e < 3; ++e) {
        const Vec2& p = (*tri)[static_cast<size_t>(e)];
        const Vec2& q = (*tri)[static_cast<size_t>((e + 1) % 3)];
        const double nx = -(q.y - p.y), ny = q.x - p.x;
        double amin = 1e30, amax = -1e30, bmin = 1e30, bmax = -1e30;
        for (const Vec2& v : a) {
          const double s = nx * v.x + ny * v.y;
          amin = std::min(amin, s);
          amax = std::max(amax, s);
        }
        for (const Vec2& v : b) {
          const double s = nx * v.x + ny * v.y;
          bmin = std::min(bmin, s);
          bmax = std::max(bmax, s);
        }
        if (std::min(amax, bmax) - std::max(amin, bmin) <= eps) return false;
      }
    }
    return true;
  };

  // coarse bucketing by bbox to avoid the full quadratic scan
  const int grid = 64;
  std::unordered_map<int, std::vector<int>> buckets;
  std::vector<std::array<Vec2, 3>> tri_uv(model.triangles.size());
  for (size_t t = 0; t < model.triangles.size(); ++t) {
    for (int c = 0; c < 3; ++c) tri_uv[t][static_cast<size_t>(c)] = model.uv[static_cast<size_t>(model.triangles[t][c])];
    double xmin = 1e30, xmax = -1e30, ymin = 1e30, ymax = -1e30;
    for (const Vec2& v : tri_uv[t]) {
      xmin = std::min(xmin, v.x);
      xmax = std::max(xmax, v.x);
      ymin = std::min(ymin, v.y);
      ymax = std::max(ymax, v.y);
    }
    for (int gx = static_cast<int>(xmin * grid); gx <= static_cast<int>(xmax * grid); ++gx)
      for (int gy = static_cast<int>(ymin * grid); gy <= static_cast<int>(ymax * grid); ++gy)
        buckets[gx * 4096 + gy].push_back(static_cast<int>(t));
  }

  for (const auto& kv : buckets) {
    const auto& list = kv.second;
    for (size_t i = 0; i < list.size(); ++i)
      for (size_t j = i + 1; j < list.size(); ++j)
        if (overlaps(tri_uv[static_cast<size_t>(list[i])], tri_uv[static_cast<size_t>(list[j])])) {
          if (message)
            *message = "UV triangles " + std::to_string(list[i]) + " and " +
                       std::to_string(list[j]) + " overlap";
          return false;
        }
  }
  return true;
}

}  // namespace mva
