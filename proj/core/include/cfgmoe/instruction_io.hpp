#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cfgmoe/instruction.hpp"
#include "cfgmoe/tensor.hpp"

namespace cfgmoe {

struct InstructionBlock {
  std::string id;
  std::vector<InstructionRecord> instructions;
};

/// Instruction record text format.
///
///   # comment
///   BLOCK <id>
///   <seg>\t<op>\t<modrm>\t<sib>\t<disp>\t<imm>\t<flags>
///
/// seg is - or one of ES CS SS DS FS GS; op, modrm and sib are hex bytes;
/// disp and imm are signed decimal or 0x-prefixed hex (optionally negated);
/// flags is - or any combination of o (operand-size), a (address-size) and
/// l (lock). Absent components are written as -.
std::vector<InstructionBlock> parse_instruction_records(std::string_view text);
std::string format_instruction_records(const std::vector<InstructionBlock>& blocks);

/// Same block structure, but each instruction line is raw hex bytes decoded
/// with x86::split_bytes.
std::vector<InstructionBlock> parse_instruction_hex(std::string_view text);

std::string format_record_line(const InstructionRecord& record);
InstructionRecord parse_record_line(std::string_view line);

/// One row per block (aggregated node vector).
Tensor encode_blocks(const std::vector<InstructionBlock>& blocks, BlockAggregation mode);
/// One row per instruction, in file order.
Tensor encode_instructions(const std::vector<InstructionBlock>& blocks);

/// Sidecar mapping matrix rows to block ids.
void write_block_manifest(const std::filesystem::path& path, const std::vector<InstructionBlock>& blocks,
                          BlockAggregation mode);

}  // namespace cfgmoe
