// Volume file I/O: RAW_JSON (float32 blob + JSON sidecar) and NIfTI-1
// (.nii, .nii.gz via zlib). Little-endian hosts assumed.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>
#include <json.hpp>

#include "afp/error.hpp"
#include "afp/volume.hpp"

namespace afp {

enum class VolumeFormat { NIFTI1, RAW_JSON };

namespace detail {

inline bool ends_with(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

// Reads an entire file, transparently inflating gzip content.
inline std::vector<char> read_all_maybe_gz(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw Error(ErrorCode::UNREADABLE_FILE, path);
    std::vector<char> out;
    char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof(buf))) > 0)
        out.insert(out.end(), buf, buf + n);
    bool bad = (n < 0);
    gzclose(f);
    if (bad) throw Error(ErrorCode::UNREADABLE_FILE, path + " (gzread failed)");
    return out;
}

inline void write_all(const std::string& path, const char* data, std::size_t n, bool gz) {
    if (gz) {
        gzFile f = gzopen(path.c_str(), "wb");
        if (!f) throw Error(ErrorCode::UNWRITABLE_PATH, path);
        std::size_t off = 0;
        while (off < n) {
            unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n - off, 1u << 24));
            if (gzwrite(f, data + off, chunk) != static_cast<int>(chunk)) {
                gzclose(f);
                throw Error(ErrorCode::UNWRITABLE_PATH, path + " (gzwrite failed)");
            }
            off += chunk;
        }
        gzclose(f);
    } else {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw Error(ErrorCode::UNWRITABLE_PATH, path);
        f.write(data, static_cast<std::streamsize>(n));
        if (!f) throw Error(ErrorCode::UNWRITABLE_PATH, path);
    }
}

// The subset of the NIfTI-1 header this library reads/writes.
#pragma pack(push, 1)
struct Nifti1Header {
    std::int32_t sizeof_hdr;    // 348
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope, scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration, toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;

inline Volume parse_nifti(const std::vector<char>& bytes, const std::string& path) {
    if (bytes.size() < sizeof(Nifti1Header))
        throw Error(ErrorCode::UNREADABLE_FILE, path + " (truncated header)");
    Nifti1Header h{};
    std::memcpy(&h, bytes.data(), sizeof(h));
    if (h.sizeof_hdr != 348)
        throw Error(ErrorCode::UNREADABLE_FILE, path + " (not NIfTI-1: sizeof_hdr != 348)");
    if (std::strncmp(h.magic, "n+1", 3) != 0 && std::strncmp(h.magic, "ni1", 3) != 0)
        throw Error(ErrorCode::UNREADABLE_FILE, path + " (bad magic)");
    int ndim = h.dim[0];
    // Accept trailing singleton dims but nothing truly 4D+.
    for (int d = 4; d <= ndim && d <= 7; ++d)
        if (h.dim[d] > 1) throw Error(ErrorCode::NON_3D_DATA, path);
    if (ndim < 3) throw Error(ErrorCode::NON_3D_DATA, path);

    // dim[1..3] are (x,y,z); our shape is (z,y,x).
    Shape3 shape{h.dim[3], h.dim[2], h.dim[1]};
    std::int64_t n = num_voxels(shape);
    if (n <= 0) throw Error(ErrorCode::NON_3D_DATA, path);

    std::size_t off = static_cast<std::size_t>(h.vox_offset);
    if (off < 352) off = 352;
    std::size_t elem;
    switch (h.datatype) {
        case kDtUint8: elem = 1; break;
        case kDtInt16: elem = 2; break;
        case kDtInt32: elem = 4; break;
        case kDtFloat32: elem = 4; break;
        case kDtFloat64: elem = 8; break;
        default:
            throw Error(ErrorCode::UNREADABLE_FILE,
                        path + " (unsupported datatype " + std::to_string(h.datatype) + ")");
    }
    if (bytes.size() < off + elem * static_cast<std::size_t>(n))
        throw Error(ErrorCode::UNREADABLE_FILE, path + " (truncated data)");

    Volume v(shape);
    v.spacing = {h.pixdim[3], h.pixdim[2], h.pixdim[1]};
    v.origin = {h.qoffset_z, h.qoffset_y, h.qoffset_x};
    const char* src = bytes.data() + off;
    float slope = (h.scl_slope == 0.f) ? 1.f : h.scl_slope;
    float inter = h.scl_inter;
    for (std::int64_t i = 0; i < n; ++i) {
        double raw;
        switch (h.datatype) {
            case kDtUint8: raw = static_cast<unsigned char>(src[i]); break;
            case kDtInt16: { std::int16_t x; std::memcpy(&x, src + 2 * i, 2); raw = x; break; }
            case kDtInt32: { std::int32_t x; std::memcpy(&x, src + 4 * i, 4); raw = x; break; }
            case kDtFloat32: { float x; std::memcpy(&x, src + 4 * i, 4); raw = x; break; }
            default: { double x; std::memcpy(&x, src + 8 * i, 8); raw = x; break; }
        }
        v.data[static_cast<std::size_t>(i)] = static_cast<float>(raw * slope + inter);
    }
    return v;
}

inline std::vector<char> serialize_nifti(const Volume& v) {
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.dim[0] = 3;
    h.dim[1] = static_cast<std::int16_t>(v.shape[2]);
    h.dim[2] = static_cast<std::int16_t>(v.shape[1]);
    h.dim[3] = static_cast<std::int16_t>(v.shape[0]);
    for (int d = 4; d <= 7; ++d) h.dim[d] = 1;
    h.datatype = kDtFloat32;
    h.bitpix = 32;
    h.pixdim[0] = 1.f;
    h.pixdim[1] = static_cast<float>(v.spacing[2]);
    h.pixdim[2] = static_cast<float>(v.spacing[1]);
    h.pixdim[3] = static_cast<float>(v.spacing[0]);
    h.vox_offset = 352.f;
    h.scl_slope = 1.f;
    h.qform_code = 1;
    h.qoffset_x = static_cast<float>(v.origin[2]);
    h.qoffset_y = static_cast<float>(v.origin[1]);
    h.qoffset_z = static_cast<float>(v.origin[0]);
    h.quatern_b = h.quatern_c = h.quatern_d = 0.f; // identity orientation
    h.xyzt_units = 2; // mm
    std::strncpy(h.magic, "n+1", 4);

    std::vector<char> out(352 + 4 * static_cast<std::size_t>(v.size()), 0);
    std::memcpy(out.data(), &h, sizeof(h));
    std::memcpy(out.data() + 352, v.data.data(), 4 * static_cast<std::size_t>(v.size()));
    return out;
}

inline std::string sidecar_path(const std::string& raw_path) {
    std::string p = raw_path;
    if (ends_with(p, ".raw")) p = p.substr(0, p.size() - 4);
    return p + ".json";
}

} // namespace detail

inline Volume load_volume(const std::string& path, VolumeFormat fmt) {
    Volume v;
    if (fmt == VolumeFormat::NIFTI1) {
        v = detail::parse_nifti(detail::read_all_maybe_gz(path), path);
    } else {
        std::ifstream jf(detail::sidecar_path(path));
        if (!jf) throw Error(ErrorCode::UNREADABLE_FILE, detail::sidecar_path(path));
        nlohmann::json j;
        try {
            jf >> j;
        } catch (const std::exception& e) {
            throw Error(ErrorCode::UNREADABLE_FILE, detail::sidecar_path(path) + ": " + e.what());
        }
        auto sh = j.at("shape").get<std::vector<std::int64_t>>();
        auto sp = j.at("spacing").get<std::vector<double>>();
        auto org = j.at("origin").get<std::vector<double>>();
        if (sh.size() != 3 || sp.size() != 3 || org.size() != 3)
            throw Error(ErrorCode::NON_3D_DATA, path);
        v.shape = {sh[0], sh[1], sh[2]};
        v.spacing = {sp[0], sp[1], sp[2]};
        v.origin = {org[0], org[1], org[2]};
        v.modality = modality_from_string(j.value("modality", "OTHER"));
        std::ifstream rf(path, std::ios::binary);
        if (!rf) throw Error(ErrorCode::UNREADABLE_FILE, path);
        std::int64_t n = num_voxels(v.shape);
        v.data.resize(static_cast<std::size_t>(n));
        rf.read(reinterpret_cast<char*>(v.data.data()), 4 * n);
        if (rf.gcount() != 4 * n)
            throw Error(ErrorCode::UNREADABLE_FILE, path + " (short read)");
    }
    v.validate();
    return v;
}

inline void save_volume(const Volume& v, const std::string& path, VolumeFormat fmt) {
    v.validate();
    if (fmt == VolumeFormat::NIFTI1) {
        auto bytes = detail::serialize_nifti(v);
        detail::write_all(path, bytes.data(), bytes.size(), detail::ends_with(path, ".gz"));
    } else {
        nlohmann::json j;
        j["shape"] = {v.shape[0], v.shape[1], v.shape[2]};
        j["spacing"] = {v.spacing[0], v.spacing[1], v.spacing[2]};
        j["origin"] = {v.origin[0], v.origin[1], v.origin[2]};
        j["modality"] = to_string(v.modality);
        std::ofstream jf(detail::sidecar_path(path));
        if (!jf) throw Error(ErrorCode::UNWRITABLE_PATH, detail::sidecar_path(path));
        jf << j.dump(2) << "\n";
        detail::write_all(path, reinterpret_cast<const char*>(v.data.data()),
                          4 * static_cast<std::size_t>(v.size()), false);
    }
}

// Label volumes reuse the RAW_JSON layout with integer values stored as
// float32 and the sidecar carrying label_names.
inline LabelVolume load_labels(const std::string& path) {
    std::ifstream jf(detail::sidecar_path(path));
    if (!jf) throw Error(ErrorCode::UNREADABLE_FILE, detail::sidecar_path(path));
    nlohmann::json j;
    jf >> j;
    Volume carrier = load_volume(path, VolumeFormat::RAW_JSON);
    LabelVolume lv(carrier.shape, 0, carrier.spacing, carrier.origin);
    for (std::size_t i = 0; i < carrier.data.size(); ++i)
        lv.labels[i] = static_cast<std::int32_t>(std::lround(carrier.data[i]));
    if (j.contains("label_names"))
        for (auto& [k, name] : j.at("label_names").items())
            lv.label_names[std::stoi(k)] = name.get<std::string>();
    lv.validate();
    return lv;
}

inline void save_labels(const LabelVolume& lv, const std::string& path) {
    lv.validate();
    Volume carrier(lv.shape, 0.f, lv.spacing, lv.origin);
    for (std::size_t i = 0; i < lv.labels.size(); ++i)
        carrier.data[i] = static_cast<float>(lv.labels[i]);
    save_volume(carrier, path, VolumeFormat::RAW_JSON);
    // Re-open the sidecar and append label_names.
    std::string sp = detail::sidecar_path(path);
    nlohmann::json j;
    {
        std::ifstream jf(sp);
        jf >> j;
    }
    nlohmann::json names = nlohmann::json::object();
    for (auto& [k, name] : lv.label_names) names[std::to_string(k)] = name;
    j["label_names"] = names;
    std::ofstream jf(sp);
    jf << j.dump(2) << "\n";
}

} // namespace afp
