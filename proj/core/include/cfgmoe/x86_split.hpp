#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfgmoe/instruction.hpp"

namespace cfgmoe::x86 {

/// Operand-size class of an opcode's trailing immediate.
enum class ImmediateKind : std::uint8_t {
  None,
  Byte,       // ib / rel8
  Word,       // iw
  Full,       // iz: 4 bytes, 2 with the operand-size override
  Rel32,      // rel32; the operand-size override is rejected
  Group3,     // F6/F7: ib/iz only when ModRM.reg is 0 or 1
  MemOffset,  // A0-A3 moffs: 8 bytes, 4 with the address-size override
};

struct OpcodeInfo {
  bool supported = false;
  bool modrm = false;
  ImmediateKind immediate = ImmediateKind::None;
};

/// Table for the one-byte opcode map in 64-bit mode without REX. Prefix bytes,
/// REX, VEX, the 0x0F escape and opcodes invalid in 64-bit mode are marked
/// unsupported.
const OpcodeInfo& opcode_info(std::uint8_t opcode);

/// True for the legacy prefixes carried by InstructionRecord.
bool is_supported_prefix(std::uint8_t byte);

/// Decodes exactly one instruction. Prefixes may appear in any order but each
/// at most once (one segment override). Displacements and immediates are
/// sign-extended to 64 bits. Throws UnsupportedInstruction for bytes outside
/// the subset and ValidationError for truncated or trailing input.
InstructionRecord split_bytes(std::span<const std::uint8_t> bytes);
InstructionRecord split_bytes(std::string_view hex);

/// Inverse of split_bytes with prefixes in canonical order
/// (segment, 0x66, 0x67, 0xF0). Throws when the record's components do not
/// match what its opcode and ModRM byte require, or a value does not fit.
std::vector<std::uint8_t> serialize(const InstructionRecord& record);

/// Parses whitespace-separated (or contiguous) hex byte pairs.
std::vector<std::uint8_t> parse_hex(std::string_view text);
std::string to_hex(std::span<const std::uint8_t> bytes);

}  // namespace cfgmoe::x86
