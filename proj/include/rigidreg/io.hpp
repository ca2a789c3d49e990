#pragma once

// Minimal MetaImage-style volume format: a UTF-8 text header (.mhd) plus a
// little-endian raw binary file. Keys, in order:
//
//   NDims = 3
//   DimSize = nx ny nz
//   ElementSpacing = sx sy sz
//   Offset = ox oy oz
//   ElementType = FLOAT32 | UINT16
//   Channels = 3            (vector fields only)
//   ElementDataFile = data.raw
//
// Unknown keys are rejected. Vector fields store interleaved x,y,z per voxel.

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rigidreg/field.hpp"
#include "rigidreg/volume.hpp"

namespace rigidreg {

static_assert(std::endian::native == std::endian::little,
              "raw volume IO assumes a little-endian host");

namespace detail {

struct MhdHeader {
    IVec3 dims;
    Vec3 spacing;
    Vec3 origin;
    std::string element_type;
    int channels = 1;
    std::string data_file;
};

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_mhd_header(const std::string& path, const MhdHeader& h) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "NDims = 3\n";
    out << "DimSize = " << h.dims.x << " " << h.dims.y << " " << h.dims.z << "\n";
    out << "ElementSpacing = " << format_double(h.spacing.x) << " "
        << format_double(h.spacing.y) << " " << format_double(h.spacing.z) << "\n";
    out << "Offset = " << format_double(h.origin.x) << " " << format_double(h.origin.y)
        << " " << format_double(h.origin.z) << "\n";
    out << "ElementType = " << h.element_type << "\n";
    if (h.channels != 1) out << "Channels = " << h.channels << "\n";
    out << "ElementDataFile = " << h.data_file << "\n";
    if (!out) throw IoError("failed writing " + path);
}

inline MhdHeader read_mhd_header(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    MhdHeader h;
    // Expected key order; Channels is optional.
    const char* expected[] = {"NDims",  "DimSize",     "ElementSpacing",
                              "Offset", "ElementType", "ElementDataFile"};
    int slot = 0;
    std::string line;
    bool got_data_file = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError(path + ": malformed header line: " + line);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (got_data_file) throw IoError(path + ": content after ElementDataFile");

        if (key == "Channels") {
            if (slot != 5)  // only allowed between ElementType and ElementDataFile
                throw IoError(path + ": Channels key out of order");
            h.channels = std::stoi(value);
            continue;
        }
        if (slot >= 6 || key != expected[slot])
            throw IoError(path + ": unexpected header key: " + key);

        std::istringstream vs(value);
        switch (slot) {
            case 0: {
                int nd = 0;
                vs >> nd;
                if (nd != 3) throw IoError(path + ": NDims must be 3");
                break;
            }
            case 1:
                vs >> h.dims.x >> h.dims.y >> h.dims.z;
                if (!vs) throw IoError(path + ": bad DimSize");
                break;
            case 2:
                vs >> h.spacing.x >> h.spacing.y >> h.spacing.z;
                if (!vs) throw IoError(path + ": bad ElementSpacing");
                break;
            case 3:
                vs >> h.origin.x >> h.origin.y >> h.origin.z;
                if (!vs) throw IoError(path + ": bad Offset");
                break;
            case 4:
                h.element_type = value;
                if (value != "FLOAT32" && value != "UINT16")
                    throw IoError(path + ": unsupported ElementType " + value);
                break;
            case 5:
                h.data_file = value;
                got_data_file = true;
                break;
        }
        ++slot;
    }
    if (slot != 6) throw IoError(path + ": truncated header");
    return h;
}

inline std::string data_path_for(const std::string& header_path, const std::string& data_file) {
    return (std::filesystem::path(header_path).parent_path() / data_file).string();
}

inline std::string raw_name_for(const std::string& header_path) {
    return std::filesystem::path(header_path).filename().replace_extension(".raw").string();
}

template <typename T>
void write_raw(const std::string& path, const T* data, size_t count) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
    if (!out) throw IoError("failed writing " + path);
}

template <typename T>
std::vector<T> read_raw(const std::string& path, size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<T> buf(count);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(T)));
    if (in.gcount() != static_cast<std::streamsize>(count * sizeof(T)))
        throw IoError(path + ": raw file shorter than header promises");
    char extra;
    if (in.read(&extra, 1) && in.gcount() == 1)
        throw IoError(path + ": raw file longer than header promises");
    return buf;
}

}  // namespace detail

inline void write_volume(const std::string& path, const Volume& vol) {
    detail::MhdHeader h{vol.dims, vol.spacing, vol.origin, "FLOAT32", 1,
                        detail::raw_name_for(path)};
    detail::write_mhd_header(path, h);
    std::vector<float> buf(vol.data.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(vol.data[i]);
    detail::write_raw(detail::data_path_for(path, h.data_file), buf.data(), buf.size());
}

inline Volume read_volume(const std::string& path) {
    const detail::MhdHeader h = detail::read_mhd_header(path);
    if (h.element_type != "FLOAT32") throw IoError(path + ": expected FLOAT32 volume");
    if (h.channels != 1) throw IoError(path + ": expected scalar volume");
    Volume vol(h.dims, h.spacing, h.origin);
    const auto buf =
        detail::read_raw<float>(detail::data_path_for(path, h.data_file), vol.voxel_count());
    for (size_t i = 0; i < buf.size(); ++i) vol.data[i] = buf[i];
    return vol;
}

inline void write_labels(const std::string& path, const LabelVolume& labels) {
    detail::MhdHeader h{labels.dims, labels.spacing, labels.origin, "UINT16", 1,
                        detail::raw_name_for(path)};
    detail::write_mhd_header(path, h);
    detail::write_raw(detail::data_path_for(path, h.data_file), labels.data.data(),
                      labels.data.size());
}

inline LabelVolume read_labels(const std::string& path) {
    const detail::MhdHeader h = detail::read_mhd_header(path);
    if (h.element_type != "UINT16") throw IoError(path + ": expected UINT16 labels");
    if (h.channels != 1) throw IoError(path + ": expected scalar labels");
    LabelVolume labels(h.dims, h.spacing, h.origin);
    labels.data =
        detail::read_raw<uint16_t>(detail::data_path_for(path, h.data_file), labels.voxel_count());
    labels.refresh_body_ids();
    return labels;
}

namespace detail {

inline void write_field_storage(const std::string& path, const FieldStorage& f) {
    MhdHeader h{f.dims, f.spacing, f.origin, "FLOAT32", 3, raw_name_for(path)};
    write_mhd_header(path, h);
    std::vector<float> buf(f.data.size() * 3);
    for (size_t i = 0; i < f.data.size(); ++i) {
        buf[3 * i + 0] = static_cast<float>(f.data[i].x);
        buf[3 * i + 1] = static_cast<float>(f.data[i].y);
        buf[3 * i + 2] = static_cast<float>(f.data[i].z);
    }
    write_raw(data_path_for(path, h.data_file), buf.data(), buf.size());
}

inline FieldStorage read_field_storage(const std::string& path) {
    const MhdHeader h = read_mhd_header(path);
    if (h.element_type != "FLOAT32") throw IoError(path + ": expected FLOAT32 field");
    if (h.channels != 3) throw IoError(path + ": expected Channels = 3");
    FieldStorage f(h.dims, h.spacing, h.origin);
    const auto buf = read_raw<float>(data_path_for(path, h.data_file), f.voxel_count() * 3);
    for (size_t i = 0; i < f.data.size(); ++i)
        f.data[i] = {buf[3 * i + 0], buf[3 * i + 1], buf[3 * i + 2]};
    return f;
}

}  // namespace detail

inline void write_field(const std::string& path, const DisplacementField& f) {
    detail::write_field_storage(path, f);
}
inline void write_field(const std::string& path, const VelocityField& f) {
    detail::write_field_storage(path, f);
}

inline DisplacementField read_displacement_field(const std::string& path) {
    DisplacementField f;
    static_cast<detail::FieldStorage&>(f) = detail::read_field_storage(path);
    return f;
}

inline VelocityField read_velocity_field(const std::string& path) {
    VelocityField f;
    static_cast<detail::FieldStorage&>(f) = detail::read_field_storage(path);
    return f;
}

}  // namespace rigidreg
