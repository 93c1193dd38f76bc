#pragma once

// VGF grid files: a JSON sidecar next to a raw little-endian payload.
//
//   sample.vgf        raw payload, channel-major: ((c*H + i)*W + j)*D + k,
//                     k fastest; dtype "u8" (one byte per value) or "f32"
//                     (IEEE-754 single, little-endian)
//   sample.vgf.json   {"channels": C, "shape": [H,W,D], "dtype": "u8"|"f32",
//                      "voxel_edge": e, "labels": [names]}

#include <bit>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmg/grid.hpp"

namespace gmg {

static_assert(std::endian::native == std::endian::little,
              "VGF I/O assumes a little-endian host");

inline void write_vgf(const std::string& path, const LabelGrid& grid,
                      const std::string& dtype_hint = "") {
    std::string dtype = dtype_hint;
    if (dtype.empty()) dtype = grid.is_one_hot() ? "u8" : "f32";
    if (dtype != "u8" && dtype != "f32") throw std::invalid_argument("vgf: bad dtype " + dtype);

    nlohmann::json meta;
    meta["channels"] = grid.channels;
    meta["shape"] = {grid.shape.h, grid.shape.w, grid.shape.d};
    meta["dtype"] = dtype;
    meta["voxel_edge"] = grid.voxel_edge;
    meta["labels"] = grid.labels;

    std::ofstream side(path + ".json");
    if (!side) throw std::runtime_error("vgf: cannot write " + path + ".json");
    side << meta.dump(2) << "\n";

    std::ofstream raw(path, std::ios::binary);
    if (!raw) throw std::runtime_error("vgf: cannot write " + path);
    if (dtype == "u8") {
        std::vector<unsigned char> buf(grid.values.size());
        for (std::size_t i = 0; i < buf.size(); ++i)
            buf[i] = static_cast<unsigned char>(grid.values[i] + 0.5);
        raw.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    } else {
        std::vector<float> buf(grid.values.size());
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = float(grid.values[i]);
        raw.write(reinterpret_cast<const char*>(buf.data()),
                  std::streamsize(buf.size() * sizeof(float)));
    }
    if (!raw) throw std::runtime_error("vgf: short write to " + path);
}

inline LabelGrid read_vgf(const std::string& path) {
    std::ifstream side(path + ".json");
    if (!side) throw std::runtime_error("vgf: cannot open " + path + ".json");
    nlohmann::json meta = nlohmann::json::parse(side);

    LabelGrid grid;
    grid.channels = meta.at("channels").get<int>();
    auto sh = meta.at("shape");
    grid.shape = {sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>()};
    grid.voxel_edge = meta.value("voxel_edge", 1.0);
    if (meta.contains("labels")) grid.labels = meta["labels"].get<std::vector<std::string>>();
    std::string dtype = meta.at("dtype").get<std::string>();

    const std::size_t n = std::size_t(grid.channels) * grid.shape.count();
    grid.values.resize(n);

    std::ifstream raw(path, std::ios::binary);
    if (!raw) throw std::runtime_error("vgf: cannot open " + path);
    if (dtype == "u8") {
        std::vector<unsigned char> buf(n);
        raw.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n));
        if (std::size_t(raw.gcount()) != n) throw std::runtime_error("vgf: truncated " + path);
        for (std::size_t i = 0; i < n; ++i) grid.values[i] = double(buf[i]);
    } else if (dtype == "f32") {
        std::vector<float> buf(n);
        raw.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n * sizeof(float)));
        if (std::size_t(raw.gcount()) != n * sizeof(float))
            throw std::runtime_error("vgf: truncated " + path);
        for (std::size_t i = 0; i < n; ++i) grid.values[i] = double(buf[i]);
    } else {
        throw std::runtime_error("vgf: unknown dtype " + dtype + " in " + path + ".json");
    }
    return grid;
}

// Channel index for a label name, or -1.
inline int label_index(const LabelGrid& grid, const std::string& name) {
    for (std::size_t i = 0; i < grid.labels.size(); ++i)
        if (grid.labels[i] == name) return int(i);
    return -1;
}

}  // namespace gmg
