#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparseflow/ingest.hpp"
#include "sparseflow/worldgen.hpp"

namespace sparseflow {

// STFE1 container: magic "STFE1\n", u32 little-endian header length,
// JSON header, raw payload bytes.
void write_container(const std::string& path, const nlohmann::json& header,
                     const std::vector<std::uint8_t>& payload);
std::pair<nlohmann::json, std::vector<std::uint8_t>> read_container(const std::string& path);

std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes);
std::uint32_t crc32_of_file(const std::string& path);

void save_field(const std::string& path, const SpeedField& field);
SpeedField load_field(const std::string& path);

void save_initial(const std::string& path, const InitialEstimate& est);
InitialEstimate load_initial(const std::string& path);

// little-endian float32 packing helpers shared with the checkpoint writer
void append_f32(std::vector<std::uint8_t>& out, const float* data, std::size_t n);
void read_f32(const std::vector<std::uint8_t>& in, std::size_t offset, float* data, std::size_t n);

} // namespace sparseflow
