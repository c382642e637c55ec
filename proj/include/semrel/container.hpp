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

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace semrel {

enum class FormatErrc {
  io_failure = 1,
  bad_magic,
  version_mismatch,
  truncated,
  shape_inconsistent,
  malformed_manifest,
};

const char* to_string(FormatErrc code);

class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  FormatErrc code() const { return code_; }

 private:
  FormatErrc code_;
};

// Single-file container shared by feature files and checkpoints:
//
//   bytes 0..7    magic (8 ASCII bytes)
//   bytes 8..15   manifest length M, unsigned 64-bit little-endian
//   next M bytes  manifest, UTF-8 JSON
//   remainder     payload: raw little-endian blobs addressed by the manifest
//
// Offsets in the manifest are relative to the start of the payload.
struct Container {
  nlohmann::json manifest;
  std::vector<std::uint8_t> payload;
};

void write_container(const std::filesystem::path& path, std::string_view magic, const nlohmann::json& manifest,
                     const std::vector<std::uint8_t>& payload);

// Reads and parses only the header and manifest; `payload_size` receives the
// number of payload bytes present on disk.
nlohmann::json read_manifest(const std::filesystem::path& path, std::string_view magic,
                             std::uint64_t* payload_size = nullptr);

// Reads the payload after the caller has validated the manifest.
std::vector<std::uint8_t> read_payload(const std::filesystem::path& path);

// Little-endian scalar codecs.
void append_f32(std::vector<std::uint8_t>& out, float v);
void append_f64(std::vector<std::uint8_t>& out, double v);
float load_f32(const std::uint8_t* p);
double load_f64(const std::uint8_t* p);

struct BlobRange {
  std::uint64_t offset = 0;
  std::uint64_t nbytes = 0;
};

// Checks that blobs are back to back from offset 0 with the expected sizes
// and that together they cover exactly `payload_size` bytes.
void validate_blob_layout(const std::vector<BlobRange>& blobs, const std::vector<std::uint64_t>& expected_sizes,
                          std::uint64_t payload_size);

}  // namespace semrel
