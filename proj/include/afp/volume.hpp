// Geometry-aware 3D volume containers. Index order is (z,y,x) everywhere;
// flat storage is z-major (x fastest).
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "afp/error.hpp"

namespace afp {

using Shape3 = std::array<std::int64_t, 3>; // (z,y,x)
using Vec3 = std::array<double, 3>;         // per-axis, same (z,y,x) order

enum class Modality { MR, CT, SYNTH_CT, OTHER };

inline const char* to_string(Modality m) {
    switch (m) {
        case Modality::MR: return "MR";
        case Modality::CT: return "CT";
        case Modality::SYNTH_CT: return "SYNTH_CT";
        case Modality::OTHER: return "OTHER";
    }
    return "OTHER";
}

inline Modality modality_from_string(const std::string& s) {
    if (s == "MR") return Modality::MR;
    if (s == "CT") return Modality::CT;
    if (s == "SYNTH_CT") return Modality::SYNTH_CT;
    return Modality::OTHER;
}

inline std::int64_t num_voxels(const Shape3& s) { return s[0] * s[1] * s[2]; }

struct Volume {
    std::vector<float> data;           // z-major contiguous
    Shape3 shape{0, 0, 0};
    Vec3 spacing{1.0, 1.0, 1.0};       // mm
    Vec3 origin{0.0, 0.0, 0.0};        // mm
    Modality modality = Modality::OTHER;

    Volume() = default;
    Volume(Shape3 sh, float fill = 0.f, Vec3 sp = {1, 1, 1}, Vec3 org = {0, 0, 0},
           Modality mod = Modality::OTHER)
        : data(static_cast<std::size_t>(num_voxels(sh)), fill),
          shape(sh), spacing(sp), origin(org), modality(mod) {}

    float& at(std::int64_t z, std::int64_t y, std::int64_t x) {
        return data[static_cast<std::size_t>((z * shape[1] + y) * shape[2] + x)];
    }
    float at(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return data[static_cast<std::size_t>((z * shape[1] + y) * shape[2] + x)];
    }
    std::int64_t size() const { return num_voxels(shape); }

    // Validates the Volume invariants; throws on violation.
    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (shape[a] < 1)
                throw Error(ErrorCode::NON_3D_DATA, "shape component < 1");
            if (!(spacing[a] > 0.0))
                throw Error(ErrorCode::SPEC_INVALID, "spacing must be strictly positive");
        }
        if (static_cast<std::int64_t>(data.size()) != size())
            throw Error(ErrorCode::SHAPE_MISMATCH, "data size does not match shape");
        std::int64_t bad = 0;
        for (float v : data)
            if (!std::isfinite(v)) ++bad;
        if (bad > 0)
            throw Error(ErrorCode::NONFINITE_VALUES,
                        std::to_string(bad) + " non-finite voxels");
    }
};

struct LabelVolume {
    std::vector<std::int32_t> labels;  // z-major, non-negative
    Shape3 shape{0, 0, 0};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};
    std::map<std::int32_t, std::string> label_names;

    LabelVolume() = default;
    LabelVolume(Shape3 sh, std::int32_t fill = 0, Vec3 sp = {1, 1, 1}, Vec3 org = {0, 0, 0})
        : labels(static_cast<std::size_t>(num_voxels(sh)), fill),
          shape(sh), spacing(sp), origin(org) {}

    std::int32_t& at(std::int64_t z, std::int64_t y, std::int64_t x) {
        return labels[static_cast<std::size_t>((z * shape[1] + y) * shape[2] + x)];
    }
    std::int32_t at(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return labels[static_cast<std::size_t>((z * shape[1] + y) * shape[2] + x)];
    }
    std::int64_t size() const { return num_voxels(shape); }

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (shape[a] < 1) throw Error(ErrorCode::NON_3D_DATA, "shape component < 1");
            if (!(spacing[a] > 0.0))
                throw Error(ErrorCode::SPEC_INVALID, "spacing must be strictly positive");
        }
        for (std::int32_t v : labels) {
            if (v < 0) throw Error(ErrorCode::SPEC_INVALID, "negative label");
            if (v != 0 && !label_names.count(v))
                throw Error(ErrorCode::SPEC_INVALID,
                            "label " + std::to_string(v) + " not declared in label_names");
        }
    }
};

// True iff shapes equal and spacing/origin agree within tol per component.
inline bool check_alignment(const Volume& a, const Volume& b, double tol) {
    if (a.shape != b.shape) return false;
    for (int i = 0; i < 3; ++i) {
        if (std::abs(a.spacing[i] - b.spacing[i]) > tol) return false;
        if (std::abs(a.origin[i] - b.origin[i]) > tol) return false;
    }
    return true;
}

inline bool check_alignment(const Volume& a, const LabelVolume& b, double tol) {
    if (a.shape != b.shape) return false;
    for (int i = 0; i < 3; ++i) {
        if (std::abs(a.spacing[i] - b.spacing[i]) > tol) return false;
        if (std::abs(a.origin[i] - b.origin[i]) > tol) return false;
    }
    return true;
}

inline bool check_alignment(const LabelVolume& a, const LabelVolume& b, double tol) {
    if (a.shape != b.shape) return false;
    for (int i = 0; i < 3; ++i) {
        if (std::abs(a.spacing[i] - b.spacing[i]) > tol) return false;
        if (std::abs(a.origin[i] - b.origin[i]) > tol) return false;
    }
    return true;
}

// Aligned MR-like source / CT-like target pair, optionally with labels.
struct VolumePair {
    Volume source;
    Volume target;
    std::optional<LabelVolume> labels;

    void validate() const {
        source.validate();
        target.validate();
        if (!check_alignment(source, target, 1e-9))
            throw Error(ErrorCode::MISALIGNED, "pair source/target geometry mismatch");
        if (labels) {
            labels->validate();
            if (!check_alignment(source, *labels, 1e-9))
                throw Error(ErrorCode::MISALIGNED, "pair labels geometry mismatch");
        }
    }
};

} // namespace afp
