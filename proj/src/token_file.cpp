#include "themegen/token_file.hpp"

#include <array>
#include <charconv>
#include <cstring>
#include <fstream>

#include "themegen/errors.hpp"

namespace themegen {
namespace {

constexpr std::array<char, 8> kMagic = {'T', 'G', 'T', 'O', 'K', 'S', '\0', '\0'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::ostream& out, std::uint16_t v) {
  const char bytes[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(bytes, 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

int melody_id_of_name(const std::string& name, const MelodyVocabulary& vocab) {
  auto value_after = [&name](const char* prefix) -> std::optional<int> {
    const std::size_t n = std::strlen(prefix);
    if (name.rfind(prefix, 0) != 0) return std::nullopt;
    int v = 0;
    auto [p, ec] = std::from_chars(name.data() + n, name.data() + name.size(), v);
    if (ec != std::errc{} || p != name.data() + name.size()) return std::nullopt;
    return v;
  };
  if (name == "Rest") return vocab.rest();
  if (name == "Padding") return vocab.padding();
  if (auto v = value_after("Pitch:")) return vocab.pitch(*v);
  if (auto v = value_after("Duration:")) return vocab.duration(*v);
  throw DataError("unknown melody token name: " + name);
}

}  // namespace

void write_tokens(const std::filesystem::path& file, const TokenSequence& tokens,
                  TokenFileFormat format) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write token file: " + file.string());

  if (format == TokenFileFormat::Binary) {
    out.write(kMagic.data(), kMagic.size());
    put_u16(out, kVersion);
    put_u16(out, static_cast<std::uint16_t>(tokens.kind));
    put_u32(out, static_cast<std::uint32_t>(tokens.ids.size()));
    for (int id : tokens.ids) put_u16(out, static_cast<std::uint16_t>(id));
  } else {
    out << "# tokens kind=" << (tokens.kind == TokenKind::Piano ? "piano" : "melody") << "\n";
    if (tokens.kind == TokenKind::Piano) {
      Vocabulary vocab;
      for (int id : tokens.ids) out << vocab.name(id) << "\n";
    } else {
      MelodyVocabulary vocab;
      for (int id : tokens.ids) out << vocab.name(id) << "\n";
    }
  }
  if (!out) throw DataError("short write: " + file.string());
}

TokenSequence read_tokens(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open token file: " + file.string());

  std::array<char, 8> head{};
  in.read(head.data(), head.size());
  const bool binary = in.gcount() == 8 && head == kMagic;
  TokenSequence tokens;

  if (binary) {
    const std::uint16_t version = get_u16(in);
    if (version != kVersion) {
      throw DataError("unsupported token file version " + std::to_string(version) + ": " +
                      file.string());
    }
    tokens.kind = static_cast<TokenKind>(get_u16(in));
    const std::uint32_t count = get_u32(in);
    if (!in) throw DataError("truncated token file header: " + file.string());
    tokens.ids.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint16_t id = get_u16(in);
      if (!in) throw DataError("truncated token file: " + file.string());
      tokens.ids.push_back(id);
    }
    return tokens;
  }

  in.clear();
  in.seekg(0);
  Vocabulary piano;
  MelodyVocabulary melody;
  tokens.kind = TokenKind::Piano;
  std::string line;
  int lineno = 0;
  bool kind_known = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.find("kind=melody") != std::string::npos) {
        tokens.kind = TokenKind::Melody;
        kind_known = true;
      } else if (line.find("kind=piano") != std::string::npos) {
        kind_known = true;
      }
      continue;
    }
    try {
      if (tokens.kind == TokenKind::Melody) {
        tokens.ids.push_back(melody_id_of_name(line, melody));
      } else {
        auto id = piano.id_of(line);
        if (!id && !kind_known && tokens.ids.empty()) {
          // Headerless files: fall back to melody names on the first line.
          try {
            tokens.ids.push_back(melody_id_of_name(line, melody));
            tokens.kind = TokenKind::Melody;
            kind_known = true;
            continue;
          } catch (const DataError&) {
          }
        }
        if (!id) {
          throw DataError(file.string() + ":" + std::to_string(lineno) +
                          ": unknown token name '" + line + "'");
        }
        tokens.ids.push_back(*id);
      }
    } catch (const DataError& e) {
      throw DataError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return tokens;
}

}  // namespace themegen
