#include "cfgmoe/x86_split.hpp"

#include <array>
#include <cctype>
#include <cstdio>

#include "cfgmoe/error.hpp"

namespace cfgmoe::x86 {

namespace {

using Kind = ImmediateKind;

constexpr std::array<OpcodeInfo, 256> build_table() {
  std::array<OpcodeInfo, 256> t{};
  auto set = [&t](int op, bool modrm, Kind imm = Kind::None) { t[op] = OpcodeInfo{true, modrm, imm}; };

  // ALU blocks 00-3F: r/m,r forms take ModRM; AL,ib and eAX,iz forms take an immediate.
  for (int base = 0x00; base < 0x40; base += 0x08) {
    for (int i = 0; i < 4; ++i) set(base + i, true);
    set(base + 4, false, Kind::Byte);
    set(base + 5, false, Kind::Full);
  }
  for (int op = 0x50; op <= 0x5F; ++op) set(op, false);
  set(0x63, true);
  set(0x68, false, Kind::Full);
  set(0x69, true, Kind::Full);
  set(0x6A, false, Kind::Byte);
  set(0x6B, true, Kind::Byte);
  for (int op = 0x6C; op <= 0x6F; ++op) set(op, false);
  for (int op = 0x70; op <= 0x7F; ++op) set(op, false, Kind::Byte);
  set(0x80, true, Kind::Byte);
  set(0x81, true, Kind::Full);
  set(0x83, true, Kind::Byte);
  for (int op = 0x84; op <= 0x8F; ++op) set(op, true);
  for (int op = 0x90; op <= 0x99; ++op) set(op, false);
  for (int op = 0x9B; op <= 0x9F; ++op) set(op, false);
  for (int op = 0xA0; op <= 0xA3; ++op) set(op, false, Kind::MemOffset);
  for (int op = 0xA4; op <= 0xA7; ++op) set(op, false);
  set(0xA8, false, Kind::Byte);
  set(0xA9, false, Kind::Full);
  for (int op = 0xAA; op <= 0xAF; ++op) set(op, false);
  for (int op = 0xB0; op <= 0xB7; ++op) set(op, false, Kind::Byte);
  for (int op = 0xB8; op <= 0xBF; ++op) set(op, false, Kind::Full);
  set(0xC0, true, Kind::Byte);
  set(0xC1, true, Kind::Byte);
  set(0xC2, false, Kind::Word);
  set(0xC3, false);
  set(0xC6, true, Kind::Byte);
  set(0xC7, true, Kind::Full);
  set(0xC9, false);
  set(0xCA, false, Kind::Word);
  set(0xCB, false);
  set(0xCC, false);
  set(0xCD, false, Kind::Byte);
  set(0xCF, false);
  for (int op = 0xD0; op <= 0xD3; ++op) set(op, true);
  set(0xD7, false);
  for (int op = 0xD8; op <= 0xDF; ++op) set(op, true);
  for (int op = 0xE0; op <= 0xE7; ++op) set(op, false, Kind::Byte);
  set(0xE8, false, Kind::Rel32);
  set(0xE9, false, Kind::Rel32);
  set(0xEB, false, Kind::Byte);
  for (int op = 0xEC; op <= 0xEF; ++op) set(op, false);
  set(0xF1, false);
  set(0xF4, false);
  set(0xF5, false);
  set(0xF6, true, Kind::Group3);
  set(0xF7, true, Kind::Group3);
  for (int op = 0xF8; op <= 0xFD; ++op) set(op, false);
  set(0xFE, true);
  set(0xFF, true);

  // Prefix bytes and opcodes invalid in 64-bit mode that the ALU loop above
  // marked as ordinary instructions.
  for (int op : {0x06, 0x07, 0x0E, 0x16, 0x17, 0x1E, 0x1F, 0x26, 0x27, 0x2E, 0x2F, 0x36, 0x37, 0x3E, 0x3F}) {
    t[op] = OpcodeInfo{};
  }
  // 0x0F is the two-byte escape.
  t[0x0F] = OpcodeInfo{};
  return t;
}

constexpr std::array<OpcodeInfo, 256> kTable = build_table();

constexpr std::uint8_t kOperandSize = 0x66;
constexpr std::uint8_t kAddressSize = 0x67;
constexpr std::uint8_t kLock = 0xF0;

std::string hex_byte(std::uint8_t b) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%02X", b);
  return buf;
}

std::optional<Segment> segment_of(std::uint8_t byte) {
  switch (byte) {
    case 0x26: return Segment::ES;
    case 0x2E: return Segment::CS;
    case 0x36: return Segment::SS;
    case 0x3E: return Segment::DS;
    case 0x64: return Segment::FS;
    case 0x65: return Segment::GS;
    default: return std::nullopt;
  }
}

std::uint8_t segment_byte(Segment s) {
  switch (s) {
    case Segment::ES: return 0x26;
    case Segment::CS: return 0x2E;
    case Segment::SS: return 0x36;
    case Segment::DS: return 0x3E;
    case Segment::FS: return 0x64;
    case Segment::GS: return 0x65;
    case Segment::None: break;
  }
  return 0;
}

// Reserved x87 encodings (D9-DF), including the undocumented register-form
// aliases, which disassemblers report as invalid.
bool x87_reserved(std::uint8_t opcode, std::uint8_t modrm) {
  const int reg = (modrm >> 3) & 7;
  if ((modrm >> 6) != 3) {
    return (opcode == 0xD9 && reg == 1) || (opcode == 0xDB && (reg == 4 || reg == 6)) ||
           (opcode == 0xDD && reg == 5);
  }
  const int m = modrm;
  switch (opcode) {
    case 0xD9: return (m >= 0xD1 && m <= 0xDF) || m == 0xE2 || m == 0xE3 || m == 0xE6 || m == 0xE7 || m == 0xEF;
    case 0xDA: return m >= 0xE0 && m != 0xE9;
    case 0xDB: return m == 0xE6 || m == 0xE7 || m >= 0xF8;
    case 0xDC: return m >= 0xD0 && m <= 0xDF;
    case 0xDD: return (m >= 0xC8 && m <= 0xCF) || m >= 0xF0;
    case 0xDE: return m >= 0xD0 && m <= 0xDF && m != 0xD9;
    case 0xDF: return (m >= 0xC8 && m <= 0xDF) || (m >= 0xE1 && m <= 0xE7) || m >= 0xF8;
    default: return false;
  }
}

// Encodings of supported opcodes that the reg field turns into something else
// (XOP, XABORT/XBEGIN, reserved group members) or that need a memory operand.
void check_modrm_form(std::uint8_t opcode, std::uint8_t modrm) {
  const int mod = modrm >> 6;
  const int reg = (modrm >> 3) & 7;
  bool ok = true;
  switch (opcode) {
    case 0x8F:
    case 0xC6:
    case 0xC7: ok = reg == 0; break;
    case 0x8D: ok = mod != 3; break;
    case 0xFE: ok = reg <= 1; break;
    case 0xFF: ok = reg != 7 && !((reg == 3 || reg == 5) && mod == 3); break;
    default: ok = !x87_reserved(opcode, modrm); break;
  }
  if (!ok) {
    throw UnsupportedInstruction("unsupported opcode form " + hex_byte(opcode) + " /" + std::to_string(reg) +
                                 " (ModRM " + hex_byte(modrm) + ")");
  }
}

bool needs_sib(std::uint8_t modrm) { return (modrm >> 6) != 3 && (modrm & 7) == 4; }

std::size_t modrm_displacement_size(std::uint8_t modrm, std::optional<std::uint8_t> sib) {
  const int mod = modrm >> 6;
  const int rm = modrm & 7;
  if (mod == 1) return 1;
  if (mod == 2) return 4;
  if (mod == 0) {
    if (rm == 5) return 4;  // RIP-relative
    if (rm == 4 && sib && (*sib & 7) == 5) return 4;
  }
  return 0;
}

std::size_t displacement_size(const OpcodeInfo& info, bool address_override, std::optional<std::uint8_t> modrm,
                              std::optional<std::uint8_t> sib) {
  if (info.immediate == Kind::MemOffset) return address_override ? 4 : 8;
  return modrm ? modrm_displacement_size(*modrm, sib) : 0;
}

std::size_t immediate_size_for(std::uint8_t opcode, const OpcodeInfo& info, bool operand_override,
                               std::optional<std::uint8_t> modrm) {
  switch (info.immediate) {
    case Kind::None:
    case Kind::MemOffset: return 0;
    case Kind::Byte: return 1;
    case Kind::Word: return 2;
    case Kind::Full: return operand_override ? 2 : 4;
    case Kind::Rel32: return 4;
    case Kind::Group3: {
      const int reg = modrm ? (*modrm >> 3) & 7 : 0;
      if (reg > 1) return 0;
      if (opcode == 0xF6) return 1;
      return operand_override ? 2 : 4;
    }
  }
  return 0;
}

void reject_operand_override(std::uint8_t opcode, const OpcodeInfo& info, bool operand_override) {
  if (info.immediate == Kind::Rel32 && operand_override) {
    throw UnsupportedInstruction("unsupported: operand-size override on rel32 branch " + hex_byte(opcode));
  }
}

std::int64_t read_signed(std::span<const std::uint8_t> bytes) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < bytes.size(); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if (bytes.size() < 8) {
    const std::uint64_t sign = std::uint64_t{1} << (8 * bytes.size() - 1);
    v = (v ^ sign) - sign;
  }
  return static_cast<std::int64_t>(v);
}

bool fits(std::int64_t value, std::size_t size) {
  if (size >= 8) return true;
  const std::int64_t lo = -(std::int64_t{1} << (8 * size - 1));
  const std::int64_t hi = (std::int64_t{1} << (8 * size - 1)) - 1;
  return value >= lo && value <= hi;
}

void write_le(std::vector<std::uint8_t>& out, std::int64_t value, std::size_t size) {
  const auto v = static_cast<std::uint64_t>(value);
  for (std::size_t i = 0; i < size; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

}  // namespace

const OpcodeInfo& opcode_info(std::uint8_t opcode) { return kTable[opcode]; }

bool is_supported_prefix(std::uint8_t byte) {
  return segment_of(byte).has_value() || byte == kOperandSize || byte == kAddressSize || byte == kLock;
}

InstructionRecord split_bytes(std::span<const std::uint8_t> bytes) {
  InstructionRecord rec;
  std::size_t pos = 0;
  auto need = [&](std::size_t n, const char* what) {
    if (pos + n > bytes.size()) {
      throw ValidationError(std::string("split_bytes: truncated instruction, missing ") + what);
    }
  };

  for (; pos < bytes.size() && is_supported_prefix(bytes[pos]); ++pos) {
    const std::uint8_t b = bytes[pos];
    if (auto seg = segment_of(b)) {
      if (rec.segment != Segment::None) throw UnsupportedInstruction("unsupported: repeated segment override");
      rec.segment = *seg;
    } else if (b == kOperandSize) {
      if (rec.operand_size_override) throw UnsupportedInstruction("unsupported: repeated 66 prefix");
      rec.operand_size_override = true;
    } else if (b == kAddressSize) {
      if (rec.address_size_override) throw UnsupportedInstruction("unsupported: repeated 67 prefix");
      rec.address_size_override = true;
    } else {
      if (rec.lock) throw UnsupportedInstruction("unsupported: repeated F0 prefix");
      rec.lock = true;
    }
  }
  need(1, "opcode");
  rec.opcode = bytes[pos++];
  const OpcodeInfo& info = kTable[rec.opcode];
  if (!info.supported) throw UnsupportedInstruction("unsupported opcode " + hex_byte(rec.opcode));
  reject_operand_override(rec.opcode, info, rec.operand_size_override);

  if (info.modrm) {
    need(1, "ModRM");
    rec.modrm = bytes[pos++];
    check_modrm_form(rec.opcode, *rec.modrm);
    if (needs_sib(*rec.modrm)) {
      need(1, "SIB");
      rec.sib = bytes[pos++];
    }
  }
  if (const std::size_t n = displacement_size(info, rec.address_size_override, rec.modrm, rec.sib)) {
    need(n, "displacement");
    rec.displacement = read_signed(bytes.subspan(pos, n));
    pos += n;
  }
  if (const std::size_t n = immediate_size_for(rec.opcode, info, rec.operand_size_override, rec.modrm)) {
    need(n, "immediate");
    rec.immediate = read_signed(bytes.subspan(pos, n));
    pos += n;
  }
  if (pos != bytes.size()) {
    throw ValidationError("split_bytes: " + std::to_string(bytes.size() - pos) + " trailing byte(s) after instruction");
  }
  return rec;
}

InstructionRecord split_bytes(std::string_view hex) {
  const auto bytes = parse_hex(hex);
  return split_bytes(std::span<const std::uint8_t>(bytes));
}

std::vector<std::uint8_t> serialize(const InstructionRecord& record) {
  record.validate();
  const OpcodeInfo& info = kTable[record.opcode];
  if (!info.supported) throw UnsupportedInstruction("unsupported opcode " + hex_byte(record.opcode));
  reject_operand_override(record.opcode, info, record.operand_size_override);
  if (record.modrm.has_value() != info.modrm) {
    throw ValidationError("serialize: opcode " + hex_byte(record.opcode) +
                          (info.modrm ? " requires a ModRM byte" : " takes no ModRM byte"));
  }
  if (record.modrm) check_modrm_form(record.opcode, *record.modrm);
  const bool sib_needed = record.modrm && needs_sib(*record.modrm);
  if (record.sib.has_value() != sib_needed) {
    throw ValidationError(std::string("serialize: ModRM ") + (sib_needed ? "requires" : "excludes") + " a SIB byte");
  }
  const std::size_t disp = displacement_size(info, record.address_size_override, record.modrm, record.sib);
  if (record.displacement.has_value() != (disp != 0)) {
    throw ValidationError("serialize: displacement presence does not match the addressing form");
  }
  const std::size_t imm = immediate_size_for(record.opcode, info, record.operand_size_override, record.modrm);
  if (record.immediate.has_value() != (imm != 0)) {
    throw ValidationError("serialize: immediate presence does not match opcode " + hex_byte(record.opcode));
  }
  if (record.displacement && !fits(*record.displacement, disp)) {
    throw ValidationError("serialize: displacement does not fit in " + std::to_string(disp) + " byte(s)");
  }
  if (record.immediate && !fits(*record.immediate, imm)) {
    throw ValidationError("serialize: immediate does not fit in " + std::to_string(imm) + " byte(s)");
  }

  std::vector<std::uint8_t> out;
  if (record.segment != Segment::None) out.push_back(segment_byte(record.segment));
  if (record.operand_size_override) out.push_back(kOperandSize);
  if (record.address_size_override) out.push_back(kAddressSize);
  if (record.lock) out.push_back(kLock);
  out.push_back(record.opcode);
  if (record.modrm) out.push_back(*record.modrm);
  if (record.sib) out.push_back(*record.sib);
  if (record.displacement) write_le(out, *record.displacement, disp);
  if (record.immediate) write_le(out, *record.immediate, imm);
  return out;
}

std::vector<std::uint8_t> parse_hex(std::string_view text) {
  std::vector<std::uint8_t> out;
  int pending = -1;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (pending >= 0) throw ValidationError("parse_hex: odd number of hex digits in '" + std::string(text) + "'");
      continue;
    }
    int digit;
    if (ch >= '0' && ch <= '9') digit = ch - '0';
    else if (ch >= 'a' && ch <= 'f') digit = ch - 'a' + 10;
    else if (ch >= 'A' && ch <= 'F') digit = ch - 'A' + 10;
    else throw ValidationError("parse_hex: invalid character '" + std::string(1, ch) + "'");
    if (pending < 0) {
      pending = digit;
    } else {
      out.push_back(static_cast<std::uint8_t>(pending * 16 + digit));
      pending = -1;
    }
  }
  if (pending >= 0) throw ValidationError("parse_hex: odd number of hex digits in '" + std::string(text) + "'");
  return out;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  std::string out;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (i) out += ' ';
    out += hex_byte(bytes[i]);
  }
  return out;
}

}  // namespace cfgmoe::x86
