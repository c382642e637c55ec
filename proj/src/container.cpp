/*
 * Copyright 2026 The semrel Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "semrel/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace semrel {

const char* to_string(FormatErrc code) {
  switch (code) {
    case FormatErrc::io_failure: return "io-failure";
    case FormatErrc::bad_magic: return "bad-magic";
    case FormatErrc::version_mismatch: return "version-mismatch";
    case FormatErrc::truncated: return "truncated";
    case FormatErrc::shape_inconsistent: return "shape-inconsistent";
    case FormatErrc::malformed_manifest: return "malformed-manifest";
  }
  return "unknown";
}

namespace {

constexpr std::size_t kHeaderBytes = 16;

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t load_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

struct Header {
  std::uint64_t manifest_size = 0;
  std::uint64_t file_size = 0;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path, std::string_view magic) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw FormatError(FormatErrc::io_failure, "cannot stat " + path.string());
  std::uint8_t head[kHeaderBytes];
  if (size < kHeaderBytes || !in.read(reinterpret_cast<char*>(head), kHeaderBytes))
    throw FormatError(FormatErrc::truncated, path.string() + " is shorter than the container header");
  if (std::memcmp(head, magic.data(), 8) != 0)
    throw FormatError(FormatErrc::bad_magic, path.string() + " does not start with " + std::string(magic));
  Header h{load_u64(head + 8), size};
  if (h.manifest_size > size - kHeaderBytes)
    throw FormatError(FormatErrc::truncated, path.string() + ": manifest extends past end of file");
  return h;
}

}  // namespace

void write_container(const std::filesystem::path& path, std::string_view magic, const nlohmann::json& manifest,
                     const std::vector<std::uint8_t>& payload) {
  if (magic.size() != 8) throw std::invalid_argument("container magic must be 8 bytes");
  const std::string text = manifest.dump();
  std::vector<std::uint8_t> head(magic.begin(), magic.end());
  append_u64(head, text.size());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrc::io_failure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(head.data()), static_cast<std::streamsize>(head.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw FormatError(FormatErrc::io_failure, "write failed for " + path.string());
}

nlohmann::json read_manifest(const std::filesystem::path& path, std::string_view magic,
                             std::uint64_t* payload_size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrc::io_failure, "cannot open " + path.string());
  const Header h = read_header(in, path, magic);
  std::string text(h.manifest_size, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(text.size())))
    throw FormatError(FormatErrc::truncated, path.string() + ": manifest truncated");
  if (payload_size) *payload_size = h.file_size - kHeaderBytes - h.manifest_size;
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrc::malformed_manifest, path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> read_payload(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrc::io_failure, "cannot open " + path.string());
  std::uint8_t head[kHeaderBytes];
  if (!in.read(reinterpret_cast<char*>(head), kHeaderBytes))
    throw FormatError(FormatErrc::truncated, path.string() + " is shorter than the container header");
  const std::uint64_t manifest_size = load_u64(head + 8);
  in.seekg(static_cast<std::streamoff>(kHeaderBytes + manifest_size));
  std::vector<std::uint8_t> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return payload;
}

void append_f32(std::vector<std::uint8_t>& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

void append_f64(std::vector<std::uint8_t>& out, double v) { append_u64(out, std::bit_cast<std::uint64_t>(v)); }

float load_f32(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

double load_f64(const std::uint8_t* p) { return std::bit_cast<double>(load_u64(p)); }

void validate_blob_layout(const std::vector<BlobRange>& blobs, const std::vector<std::uint64_t>& expected_sizes,
                          std::uint64_t payload_size) {
  if (blobs.size() != expected_sizes.size())
    throw FormatError(FormatErrc::shape_inconsistent, "blob count does not match manifest entries");
  std::uint64_t cursor = 0;
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    if (blobs[i].nbytes != expected_sizes[i])
      throw FormatError(FormatErrc::shape_inconsistent,
                        "blob " + std::to_string(i) + " has " + std::to_string(blobs[i].nbytes) +
                            " bytes, shape implies " + std::to_string(expected_sizes[i]));
    if (blobs[i].offset != cursor)
      throw FormatError(FormatErrc::shape_inconsistent, "blob " + std::to_string(i) + " offset is not contiguous");
    cursor += blobs[i].nbytes;
  }
  if (payload_size < cursor)
    throw FormatError(FormatErrc::truncated, "payload has " + std::to_string(payload_size) + " bytes, manifest needs " +
                                                 std::to_string(cursor));
  if (payload_size > cursor)
    throw FormatError(FormatErrc::shape_inconsistent, "payload has " + std::to_string(payload_size - cursor) +
                                                          " trailing bytes");
}

}  // namespace semrel
