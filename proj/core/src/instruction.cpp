#include "cfgmoe/instruction.hpp"

#include <algorithm>

#include "cfgmoe/error.hpp"

namespace cfgmoe {

namespace {

constexpr std::array<std::string_view, 7> kSegmentNames = {"none", "ES", "CS", "SS", "DS", "FS", "GS"};

// Writes a one-hot group for the three fields of a ModRM/SIB byte:
// 2-bit field (4 slots), 3-bit field (8 slots), 3-bit field (8 slots).
void encode_split_byte(std::uint8_t byte, std::uint8_t* out) {
  out[(byte >> 6) & 0x3] = 1;
  out[4 + ((byte >> 3) & 0x7)] = 1;
  out[12 + (byte & 0x7)] = 1;
}

void encode_bits(std::int64_t value, std::uint8_t* out) {
  const auto pattern = static_cast<std::uint64_t>(value);
  for (std::size_t i = 0; i < 64; ++i) out[i] = static_cast<std::uint8_t>((pattern >> i) & 1U);
}

}  // namespace

std::string_view to_string(Segment s) { return kSegmentNames.at(static_cast<std::size_t>(s)); }

Segment parse_segment(std::string_view text) {
  if (text == "-" || text == "none") return Segment::None;
  for (std::size_t i = 1; i < kSegmentNames.size(); ++i) {
    std::string upper(text);
    std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
    if (upper == kSegmentNames[i]) return static_cast<Segment>(i);
  }
  throw ValidationError("unknown segment override '" + std::string(text) + "'");
}

void InstructionRecord::validate() const {
  if (sib && !modrm) throw ValidationError("instruction record: SIB byte present without ModRM");
  if (static_cast<std::size_t>(segment) >= kSegmentNames.size()) {
    throw ValidationError("instruction record: invalid segment value");
  }
}

std::string_view to_string(BlockAggregation mode) { return mode == BlockAggregation::Mean ? "mean" : "max"; }

BlockAggregation parse_block_aggregation(std::string_view text) {
  if (text == "mean") return BlockAggregation::Mean;
  if (text == "max") return BlockAggregation::Max;
  throw ValidationError("unknown block aggregation '" + std::string(text) + "' (expected mean or max)");
}

EncodedInstruction encode_instruction(const InstructionRecord& record) {
  record.validate();
  using namespace layout;
  EncodedInstruction enc;
  std::uint8_t* bits = enc.bits.data();

  bits[kPrefixOffset + static_cast<std::size_t>(record.segment)] = 1;
  bits[kPrefixOffset + 7] = record.operand_size_override;
  bits[kPrefixOffset + 8] = record.address_size_override;
  bits[kPrefixOffset + 9] = record.lock;

  bits[kOpcodeOffset + record.opcode] = 1;

  if (record.modrm) encode_split_byte(*record.modrm, bits + kModrmOffset);
  if (record.sib) encode_split_byte(*record.sib, bits + kSibOffset);
  if (record.displacement) encode_bits(*record.displacement, bits + kDisplacementOffset);
  if (record.immediate) encode_bits(*record.immediate, bits + kImmediateOffset);

  bits[kOptionOffset + kOptPrefix] = record.has_prefix();
  bits[kOptionOffset + kOptModrm] = record.modrm.has_value();
  bits[kOptionOffset + kOptSib] = record.sib.has_value();
  bits[kOptionOffset + kOptDisplacement] = record.displacement.has_value();
  bits[kOptionOffset + kOptImmediate] = record.immediate.has_value();
  return enc;
}

NodeVector aggregate_block(std::span<const EncodedInstruction> instructions, BlockAggregation mode) {
  if (instructions.empty()) throw ValidationError("aggregate_block: empty basic block");
  NodeVector node;
  if (mode == BlockAggregation::Mean) {
    for (const auto& instr : instructions) {
      for (std::size_t i = 0; i < layout::kWidth; ++i) node.values[i] += instr.bits[i];
    }
    const double n = static_cast<double>(instructions.size());
    for (double& v : node.values) v /= n;
  } else {
    for (const auto& instr : instructions) {
      for (std::size_t i = 0; i < layout::kWidth; ++i) {
        node.values[i] = std::max(node.values[i], static_cast<double>(instr.bits[i]));
      }
    }
  }
  return node;
}

}  // namespace cfgmoe
