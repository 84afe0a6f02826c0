#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "alloop/core/types.hpp"

namespace alloop::extxyz {

// Extended-XYZ frame container.
//
//   line 1: atom count
//   line 2: key=value tokens: Lattice="9 floats" Properties=species:S:1:pos:R:3[:forces:R:3]
//           [energy=<float>] pbc="T T T" [structure_id=<text>] [other keys...]
//   then one line per atom, columns in Properties order.
//
// Floats are printed with 17 significant digits. Velocities and region tags
// travel as extra properties (vel:R:3, region:S:1); the validation flag as
// is_validation=T. Unknown header keys are preserved in
// AtomicConfiguration::extra.

using Frame = std::variant<AtomicConfiguration, LabeledFrame>;

std::string encode(const AtomicConfiguration& config);
std::string encode(const LabeledFrame& frame);
std::string encode(const Frame& frame);

// Decodes exactly one block. Errors are ParseError with the 1-based line
// number inside the block (offset by first_line when given).
Frame decode(const std::string& block, std::size_t first_line = 1);

// Reads every block of a concatenated stream.
std::vector<Frame> read_all(std::istream& in);
std::vector<Frame> read_file(const std::filesystem::path& path);

void write_file(const std::filesystem::path& path, const std::vector<Frame>& frames);
void write_file(const std::filesystem::path& path, const std::vector<LabeledFrame>& frames);
void write_file(const std::filesystem::path& path, const std::vector<AtomicConfiguration>& frames);

// Convenience accessors.
const AtomicConfiguration& config_of(const Frame& frame);
std::vector<LabeledFrame> labeled_only(const std::vector<Frame>& frames);

// Formats a double with 17 significant digits.
std::string format_double(double value);

}  // namespace alloop::extxyz
