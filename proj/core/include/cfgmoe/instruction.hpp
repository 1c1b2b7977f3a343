#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cfgmoe {

/// Segment-override prefix. The enumerator order is the one-hot order of the
/// prefix block.
enum class Segment : std::uint8_t { None = 0, ES, CS, SS, DS, FS, GS };

std::string_view to_string(Segment s);
Segment parse_segment(std::string_view text);

/// One decomposed x86-64 instruction.
struct InstructionRecord {
  Segment segment = Segment::None;
  bool operand_size_override = false;
  bool address_size_override = false;
  bool lock = false;
  std::uint8_t opcode = 0;
  std::optional<std::uint8_t> modrm;
  std::optional<std::uint8_t> sib;
  std::optional<std::int64_t> displacement;
  std::optional<std::int64_t> immediate;

  /// Any of the four prefix fields differs from its default.
  bool has_prefix() const noexcept {
    return segment != Segment::None || operand_size_override || address_size_override || lock;
  }

  /// Throws ValidationError when a SIB byte is present without ModRM.
  void validate() const;

  friend bool operator==(const InstructionRecord&, const InstructionRecord&) = default;
};

namespace layout {
inline constexpr std::size_t kPrefix = 10;
inline constexpr std::size_t kOpcode = 256;
inline constexpr std::size_t kModrm = 20;
inline constexpr std::size_t kSib = 20;
inline constexpr std::size_t kDisplacement = 64;
inline constexpr std::size_t kImmediate = 64;
inline constexpr std::size_t kOption = 5;

inline constexpr std::size_t kPrefixOffset = 0;
inline constexpr std::size_t kOpcodeOffset = kPrefixOffset + kPrefix;
inline constexpr std::size_t kModrmOffset = kOpcodeOffset + kOpcode;
inline constexpr std::size_t kSibOffset = kModrmOffset + kModrm;
inline constexpr std::size_t kDisplacementOffset = kSibOffset + kSib;
inline constexpr std::size_t kImmediateOffset = kDisplacementOffset + kDisplacement;
inline constexpr std::size_t kOptionOffset = kImmediateOffset + kImmediate;
inline constexpr std::size_t kWidth = kOptionOffset + kOption;

// Option block order.
inline constexpr std::size_t kOptPrefix = 0;
inline constexpr std::size_t kOptModrm = 1;
inline constexpr std::size_t kOptSib = 2;
inline constexpr std::size_t kOptDisplacement = 3;
inline constexpr std::size_t kOptImmediate = 4;
}  // namespace layout

static_assert(layout::kWidth == 439);

/// 439 binary features:
/// [prefix:10 | opcode:256 | modrm:20 | sib:20 | displacement:64 | immediate:64 | option:5].
struct EncodedInstruction {
  std::array<std::uint8_t, layout::kWidth> bits{};

  friend bool operator==(const EncodedInstruction&, const EncodedInstruction&) = default;
};

/// Aggregated basic-block vector.
struct NodeVector {
  std::array<double, layout::kWidth> values{};
};

enum class BlockAggregation { Mean, Max };

std::string_view to_string(BlockAggregation mode);
BlockAggregation parse_block_aggregation(std::string_view text);

EncodedInstruction encode_instruction(const InstructionRecord& record);

/// Component-wise mean or max over a block's instruction vectors.
NodeVector aggregate_block(std::span<const EncodedInstruction> instructions,
                           BlockAggregation mode = BlockAggregation::Mean);

}  // namespace cfgmoe
