#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mva/camera.hpp"
#include "mva/geometry.hpp"

namespace mva {

struct Joint {
  std::string name;
  Vec3 pivot;
  int parent = -1;  // kinematic chain: jaw inherits the neck transform
};

// Toy parametric head: linear expression blendshapes plus jointed rigid
// pose with linear blend skinning, and a texture-atlas UV per vertex.
// The identity shape is folded into the base vertices.
struct MorphableModel {
  std::vector<Vec3> base_vertices;                 // N, meters
  std::vector<std::array<int, 3>> triangles;       // T
  std::vector<Vec2> uv;                            // N, in [0,1]^2
  std::vector<std::vector<Vec3>> expr_basis;       // K x N per-vertex deltas
  std::vector<Joint> joints;                       // joint 0 is the neck
  std::vector<std::vector<double>> skin_weights;   // N x J, rows sum to <= 1
  double psi_max = 3.0;

  int num_vertices() const { return static_cast<int>(base_vertices.size()); }
  int num_triangles() const { return static_cast<int>(triangles.size()); }
  int num_expressions() const { return static_cast<int>(expr_basis.size()); }
  int num_joints() const { return static_cast<int>(joints.size()); }

  void validate() const;
  uint64_t hash() const;
};

// Per-frame drive signal: expression code, per-joint axis-angle pose, and
// the observing camera.
struct FrameParams {
  std::vector<double> psi;    // K
  std::vector<Vec3> theta;    // J axis-angle vectors, radians
  Camera camera;
  int frame_index = 0;
};

// Checks drive-signal bounds: |psi_k| <= psi_max, joint angles within +-pi.
void validate_frame_params(const MorphableModel& model, const std::vector<double>& psi,
                           const std::vector<Vec3>& theta);

// V = skinning(base + sum_k psi_k * basis_k, theta).
std::vector<Vec3> evaluate_mesh(const MorphableModel& model, const std::vector<double>& psi,
                                const std::vector<Vec3>& theta);

// D = V(psi, theta) - V(0, 0).
std::vector<Vec3> displacements(const MorphableModel& model, const std::vector<double>& psi,
                                const std::vector<Vec3>& theta);

// Removes the neck rigid transform from the vertices and folds the same
// transform into the camera, leaving every rendered pixel unchanged.
struct NeckNormalized {
  std::vector<Vec3> vertices;
  Camera camera;
};
NeckNormalized neck_normalize(const std::vector<Vec3>& vertices, const Camera& camera,
                              const Vec3& theta_neck, const MorphableModel& model);

// Deterministic head-like model: an ellipsoid tessellated as a UV sphere
// with localized Gaussian blendshapes, a neck pivot below the mesh and a
// jaw pivot at mid height.
MorphableModel synth_model(uint64_t seed, int target_vertices = 500, int num_blendshapes = 4);

void save_model(const MorphableModel& model, const std::string& path);
MorphableModel load_model(const std::string& path);

// True when no two UV triangles overlap with positive area (shared edges
// and vertices are allowed).
bool uv_triangles_disjoint(const MorphableModel& model, std::string* message = nullptr);

}  // namespace mva
