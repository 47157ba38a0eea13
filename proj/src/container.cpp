#include "sparseflow/container.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <zlib.h>

namespace sparseflow {

namespace {
constexpr char kMagic[6] = {'S', 'T', 'F', 'E', '1', '\n'};
}

void append_f32(std::vector<std::uint8_t>& out, const float* data, std::size_t n) {
    std::size_t off = out.size();
    out.resize(off + n * 4);
    std::memcpy(out.data() + off, data, n * 4); // little-endian host
}

void read_f32(const std::vector<std::uint8_t>& in, std::size_t offset, float* data, std::size_t n) {
    if (offset + n * 4 > in.size()) throw std::runtime_error("container: truncated payload");
    std::memcpy(data, in.data() + offset, n * 4);
}

std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes) {
    return static_cast<std::uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::uint32_t crc32_of_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    uLong crc = crc32(0, nullptr, 0);
    char buf[65536];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        crc = crc32(crc, reinterpret_cast<const Bytef*>(buf), static_cast<uInt>(in.gcount()));
    return static_cast<std::uint32_t>(crc);
}

void write_container(const std::string& path, const nlohmann::json& header,
                     const std::vector<std::uint8_t>& payload) {
    std::string hdr = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(kMagic, sizeof kMagic);
    std::uint32_t len = static_cast<std::uint32_t>(hdr.size());
    std::uint8_t lenbuf[4] = {static_cast<std::uint8_t>(len & 0xff),
                              static_cast<std::uint8_t>((len >> 8) & 0xff),
                              static_cast<std::uint8_t>((len >> 16) & 0xff),
                              static_cast<std::uint8_t>((len >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(lenbuf), 4);
    out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::pair<nlohmann::json, std::vector<std::uint8_t>> read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[6];
    if (!in.read(magic, 6) || std::memcmp(magic, kMagic, 6) != 0)
        throw std::runtime_error(path + ": not an STFE1 container");
    std::uint8_t lenbuf[4];
    if (!in.read(reinterpret_cast<char*>(lenbuf), 4))
        throw std::runtime_error(path + ": truncated header length");
    std::uint32_t len = lenbuf[0] | (lenbuf[1] << 8) | (lenbuf[2] << 16) |
                        (static_cast<std::uint32_t>(lenbuf[3]) << 24);
    std::string hdr(len, '\0');
    if (!in.read(hdr.data(), len)) throw std::runtime_error(path + ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hdr);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": bad container header: " + e.what());
    }
    std::vector<std::uint8_t> payload{std::istreambuf_iterator<char>(in),
                                      std::istreambuf_iterator<char>()};
    return {std::move(header), std::move(payload)};
}

void save_field(const std::string& path, const SpeedField& field) {
    nlohmann::json hdr = {{"kind", "field"},
                          {"T", field.T},
                          {"R", field.R},
                          {"step_minutes", field.step_minutes},
                          {"map_digest", field.map_digest}};
    std::vector<std::uint8_t> payload;
    append_f32(payload, field.values.data(), field.values.size());
    write_container(path, hdr, payload);
}

SpeedField load_field(const std::string& path) {
    auto [hdr, payload] = read_container(path);
    if (hdr.value("kind", "") != "field")
        throw std::runtime_error(path + ": expected kind \"field\"");
    SpeedField f;
    f.T = hdr.at("T").get<int>();
    f.R = hdr.at("R").get<int>();
    f.step_minutes = hdr.at("step_minutes").get<double>();
    f.map_digest = hdr.at("map_digest").get<std::uint32_t>();
    f.values.resize(static_cast<std::size_t>(f.T) * f.R);
    read_f32(payload, 0, f.values.data(), f.values.size());
    return f;
}

void save_initial(const std::string& path, const InitialEstimate& est) {
    nlohmann::json hdr = {{"kind", "initial"},
                          {"T", est.T},
                          {"R", est.R},
                          {"step_minutes", est.step_minutes},
                          {"map_digest", est.map_digest}};
    std::vector<std::uint8_t> payload;
    append_f32(payload, est.values.data(), est.values.size());
    append_f32(payload, est.mask.data(), est.mask.size());
    append_f32(payload, est.counts.data(), est.counts.size());
    write_container(path, hdr, payload);
}

InitialEstimate load_initial(const std::string& path) {
    auto [hdr, payload] = read_container(path);
    if (hdr.value("kind", "") != "initial")
        throw std::runtime_error(path + ": expected kind \"initial\"");
    InitialEstimate e;
    e.T = hdr.at("T").get<int>();
    e.R = hdr.at("R").get<int>();
    e.step_minutes = hdr.at("step_minutes").get<double>();
    e.map_digest = hdr.at("map_digest").get<std::uint32_t>();
    std::size_t n = static_cast<std::size_t>(e.T) * e.R;
    e.values.resize(n);
    e.mask.resize(n);
    e.counts.resize(n);
    read_f32(payload, 0, e.values.data(), n);
    read_f32(payload, n * 4, e.mask.data(), n);
    read_f32(payload, n * 8, e.counts.data(), n);
    return e;
}

} // namespace sparseflow
