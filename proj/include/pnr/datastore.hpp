#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pnr/continual.hpp"
#include "pnr/model.hpp"

namespace pnr {

// Gaussian clusters around C means drawn uniformly on the sphere of the given
// radius. Means are redrawn until every pair is at least radius / sqrt(C) apart;
// RejectionExhausted after 10^4 draws in total. Rows are grouped by class.
LabeledDataset gen_synthetic(std::uint32_t num_classes, std::size_t input_dim,
                             std::size_t samples_per_class, double radius, double sigma,
                             std::uint64_t seed);

inline constexpr std::array<std::uint8_t, 8> kDatasetMagic = {'P', 'N', 'R', 'D', 'A', 'T', 'A', 0};
inline constexpr std::array<std::uint8_t, 8> kCheckpointMagic = {'P', 'N', 'R', 'C', 'K', 'P', 'T', 0};
inline constexpr std::uint32_t kFormatVersion = 1;

// Byte layouts are described in docs/FORMATS.md. Decoding throws BadMagic,
// VersionMismatch, TruncatedFile (length disagrees with the header) or ChecksumFail.
std::vector<std::uint8_t> encode_dataset(const LabeledDataset& ds);
LabeledDataset decode_dataset(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_checkpoint(const EncoderStack& stack);
EncoderStack decode_checkpoint(std::span<const std::uint8_t> bytes);

// Whole-file helpers. Writes go to a temporary sibling and are renamed into place.
// Failures throw IoError.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::filesystem::path& path);
void save_checkpoint(const std::filesystem::path& path, const EncoderStack& stack);
EncoderStack load_checkpoint(const std::filesystem::path& path);

}  // namespace pnr
