#include "support/x86_corpus.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

#include "cfgmoe/error.hpp"
#include "cfgmoe/x86_split.hpp"

namespace cfgmoe::testing {

std::vector<std::vector<std::uint8_t>> random_x86_corpus(Rng& rng, std::size_t count) {
  std::vector<std::uint8_t> opcodes;
  for (int op = 0; op < 256; ++op)
    if (x86::opcode_info(static_cast<std::uint8_t>(op)).supported) opcodes.push_back(static_cast<std::uint8_t>(op));
  const std::uint8_t segments[] = {0x26, 0x2E, 0x36, 0x3E, 0x64, 0x65};

  std::vector<std::vector<std::uint8_t>> out;
  while (out.size() < count) {
    std::vector<std::uint8_t> bytes;
    if (rng.bernoulli(0.2)) bytes.push_back(segments[rng.uniform_int(0, 5)]);
    if (rng.bernoulli(0.2)) bytes.push_back(0x66);
    if (rng.bernoulli(0.15)) bytes.push_back(0x67);
    if (rng.bernoulli(0.1)) bytes.push_back(0xF0);
    bytes.push_back(opcodes[rng.uniform_int(0, static_cast<std::int64_t>(opcodes.size()) - 1)]);
    std::vector<std::uint8_t> tail(15);
    for (auto& b : tail) b = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    for (std::size_t extra = 0; extra <= tail.size(); ++extra) {
      std::vector<std::uint8_t> candidate = bytes;
      candidate.insert(candidate.end(), tail.begin(), tail.begin() + static_cast<std::ptrdiff_t>(extra));
      try {
        x86::split_bytes(std::span<const std::uint8_t>(candidate));
        out.push_back(std::move(candidate));
        break;
      } catch (const UnsupportedInstruction&) {
        break;
      } catch (const ValidationError&) {
        // truncated: grow the tail
      }
    }
  }
  return out;
}

bool objdump_available() { return std::system("objdump --version > /dev/null 2>&1") == 0; }

ObjdumpReport objdump_cross_check(const std::vector<std::vector<std::uint8_t>>& corpus) {
  const auto dir = std::filesystem::temp_directory_path() / ("cfgmoe_objdump_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const auto bin = dir / "corpus.bin";
  std::map<std::size_t, std::size_t> expected;  // offset -> corpus index
  {
    std::ofstream f(bin, std::ios::binary);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      expected[offset] = i;
      f.write(reinterpret_cast<const char*>(corpus[i].data()), static_cast<std::streamsize>(corpus[i].size()));
      // A NOP separator keeps a prefix-like trailing byte (e.g. FWAIT) from
      // being fused with the next instruction by the disassembler.
      const char nop = static_cast<char>(0x90);
      f.write(&nop, 1);
      offset += corpus[i].size() + 1;
    }
  }
  const std::string cmd = "objdump -D -b binary -m i386:x86-64 --insn-width=16 " + bin.string() + " 2>/dev/null";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  ObjdumpReport report;
  if (!pipe) {
    report.mismatches = corpus.size();
    report.first_mismatch = "could not run objdump";
    return report;
  }
  std::string text;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) text.append(buf, n);
  ::pclose(pipe);
  std::filesystem::remove_all(dir);

  // Lines look like "  1f:\t66 90   \txchg   %ax,%ax".
  std::map<std::size_t, std::pair<std::size_t, std::string>> decoded;  // offset -> (length, mnemonic)
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    const auto t1 = line.find('\t');
    if (t1 == std::string::npos) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos || colon > t1) continue;
    std::size_t offset = 0;
    try {
      offset = std::stoul(line.substr(0, colon), nullptr, 16);
    } catch (...) {
      continue;
    }
    const auto t2 = line.find('\t', t1 + 1);
    const std::string hex = line.substr(t1 + 1, t2 == std::string::npos ? std::string::npos : t2 - t1 - 1);
    std::istringstream hs(hex);
    std::string tok;
    std::size_t len = 0;
    while (hs >> tok) ++len;
    decoded[offset] = {len, t2 == std::string::npos ? "" : line.substr(t2 + 1)};
  }

  for (const auto& [offset, index] : expected) {
    ++report.checked;
    const auto it = decoded.find(offset);
    std::string problem;
    if (it == decoded.end()) {
      problem = "no instruction boundary at this offset";
    } else if (it->second.first != corpus[index].size()) {
      problem = "objdump length " + std::to_string(it->second.first);
    } else if (it->second.second.find("(bad)") != std::string::npos) {
      problem = "objdump reports (bad)";
    }
    if (!problem.empty()) {
      if (report.mismatches == 0) {
        report.first_mismatch = x86::to_hex(corpus[index]) + ": " + problem +
                                (it == decoded.end() ? "" : " [" + it->second.second + "]");
      }
      ++report.mismatches;
    }
  }
  return report;
}

}  // namespace cfgmoe::testing
