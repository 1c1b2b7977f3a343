#include "cfgmoe/instruction_io.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "cfgmoe/csv.hpp"
#include "cfgmoe/error.hpp"
#include "cfgmoe/x86_split.hpp"

namespace cfgmoe {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::uint8_t parse_byte(std::string_view text, const char* what) {
  unsigned value = 0;
  if (text.size() > 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X')) text.remove_prefix(2);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value, 16);
  if (ec != std::errc{} || ptr != text.data() + text.size() || value > 0xFF || text.empty()) {
    throw ValidationError(std::string("invalid ") + what + " byte '" + std::string(text) + "'");
  }
  return static_cast<std::uint8_t>(value);
}

std::int64_t parse_signed(std::string_view text, const char* what) {
  const std::string original(text);
  bool negative = false;
  if (!text.empty() && (text[0] == '-' || text[0] == '+')) {
    negative = text[0] == '-';
    text.remove_prefix(1);
  }
  int base = 10;
  if (text.size() > 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X')) {
    base = 16;
    text.remove_prefix(2);
  }
  std::uint64_t magnitude = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), magnitude, base);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ValidationError(std::string("invalid ") + what + " '" + original + "'");
  }
  // Hex without a sign is a raw 64-bit pattern; decimal must fit int64.
  if (negative) {
    if (magnitude > (std::uint64_t{1} << 63)) throw ValidationError(std::string(what) + " out of range: " + original);
    return static_cast<std::int64_t>(std::uint64_t{0} - magnitude);
  }
  if (base == 10 && magnitude > static_cast<std::uint64_t>(INT64_MAX)) {
    throw ValidationError(std::string(what) + " out of range: " + original);
  }
  return static_cast<std::int64_t>(magnitude);
}

std::string hex2(std::uint8_t b) {
  char buf[4];
  std::snprintf(buf, sizeof buf, "%02x", b);
  return buf;
}

template <class LineParser>
std::vector<InstructionBlock> parse_blocks(std::string_view text, LineParser&& parse_line) {
  std::vector<InstructionBlock> blocks;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    try {
      if (line.starts_with("BLOCK")) {
        std::string_view id = trim(line.substr(5));
        if (id.empty()) throw ValidationError("BLOCK header without an id");
        for (const auto& b : blocks) {
          if (b.id == id) throw ValidationError("duplicate block id '" + std::string(id) + "'");
        }
        blocks.push_back(InstructionBlock{std::string(id), {}});
        continue;
      }
      if (blocks.empty()) throw ValidationError("instruction before the first BLOCK header");
      blocks.back().instructions.push_back(parse_line(line));
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (const auto& b : blocks) {
    if (b.instructions.empty()) throw ValidationError("block '" + b.id + "' has no instructions");
  }
  return blocks;
}

}  // namespace

InstructionRecord parse_record_line(std::string_view line) {
  const auto fields = split_tabs(line);
  if (fields.size() != 7) {
    throw ValidationError("expected 7 tab-separated fields, found " + std::to_string(fields.size()));
  }
  InstructionRecord rec;
  rec.segment = parse_segment(trim(fields[0]));
  rec.opcode = parse_byte(trim(fields[1]), "opcode");
  if (auto f = trim(fields[2]); f != "-") rec.modrm = parse_byte(f, "modrm");
  if (auto f = trim(fields[3]); f != "-") rec.sib = parse_byte(f, "sib");
  if (auto f = trim(fields[4]); f != "-") rec.displacement = parse_signed(f, "displacement");
  if (auto f = trim(fields[5]); f != "-") rec.immediate = parse_signed(f, "immediate");
  if (auto f = trim(fields[6]); f != "-") {
    for (char c : f) {
      switch (c) {
        case 'o': rec.operand_size_override = true; break;
        case 'a': rec.address_size_override = true; break;
        case 'l': rec.lock = true; break;
        default: throw ValidationError("unknown prefix flag '" + std::string(1, c) + "'");
      }
    }
  }
  rec.validate();
  return rec;
}

std::string format_record_line(const InstructionRecord& r) {
  std::string out = r.segment == Segment::None ? "-" : std::string(to_string(r.segment));
  out += '\t' + hex2(r.opcode);
  out += '\t' + (r.modrm ? hex2(*r.modrm) : std::string("-"));
  out += '\t' + (r.sib ? hex2(*r.sib) : std::string("-"));
  out += '\t' + (r.displacement ? std::to_string(*r.displacement) : std::string("-"));
  out += '\t' + (r.immediate ? std::to_string(*r.immediate) : std::string("-"));
  std::string flags;
  if (r.operand_size_override) flags += 'o';
  if (r.address_size_override) flags += 'a';
  if (r.lock) flags += 'l';
  out += '\t' + (flags.empty() ? std::string("-") : flags);
  return out;
}

std::vector<InstructionBlock> parse_instruction_records(std::string_view text) {
  return parse_blocks(text, [](std::string_view line) { return parse_record_line(line); });
}

std::vector<InstructionBlock> parse_instruction_hex(std::string_view text) {
  return parse_blocks(text, [](std::string_view line) { return x86::split_bytes(line); });
}

std::string format_instruction_records(const std::vector<InstructionBlock>& blocks) {
  std::string out;
  for (const auto& block : blocks) {
    out += "BLOCK " + block.id + "\n";
    for (const auto& rec : block.instructions) out += format_record_line(rec) + "\n";
  }
  return out;
}

Tensor encode_blocks(const std::vector<InstructionBlock>& blocks, BlockAggregation mode) {
  Tensor out = Tensor::zeros(blocks.size(), layout::kWidth);
  std::vector<EncodedInstruction> encoded;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    encoded.clear();
    for (const auto& rec : blocks[b].instructions) encoded.push_back(encode_instruction(rec));
    const NodeVector node = aggregate_block(encoded, mode);
    std::copy(node.values.begin(), node.values.end(), out.row_span(b).begin());
  }
  return out;
}

Tensor encode_instructions(const std::vector<InstructionBlock>& blocks) {
  std::size_t total = 0;
  for (const auto& b : blocks) total += b.instructions.size();
  Tensor out = Tensor::zeros(total, layout::kWidth);
  std::size_t row = 0;
  for (const auto& b : blocks) {
    for (const auto& rec : b.instructions) {
      const EncodedInstruction enc = encode_instruction(rec);
      auto dst = out.row_span(row++);
      for (std::size_t i = 0; i < layout::kWidth; ++i) dst[i] = enc.bits[i];
    }
  }
  return out;
}

void write_block_manifest(const std::filesystem::path& path, const std::vector<InstructionBlock>& blocks,
                          BlockAggregation mode) {
  nlohmann::ordered_json doc;
  doc["width"] = layout::kWidth;
  doc["aggregation"] = std::string(to_string(mode));
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    rows.push_back({{"row", i}, {"block", blocks[i].id}, {"instructions", blocks[i].instructions.size()}});
  }
  doc["rows"] = std::move(rows);
  write_text_file(path, doc.dump(2) + "\n");
}

}  // namespace cfgmoe
