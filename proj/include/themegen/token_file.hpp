#pragma once

#include <filesystem>

#include "themegen/vocab.hpp"

namespace themegen {

enum class TokenFileFormat { Text, Binary };

// Text files carry one token name per line behind a `# tokens kind=...`
// header; binary files are a fixed header plus little-endian u16 ids.
// read_tokens sniffs the format from the leading bytes.
void write_tokens(const std::filesystem::path& file, const TokenSequence& tokens,
                  TokenFileFormat format = TokenFileFormat::Text);
TokenSequence read_tokens(const std::filesystem::path& file);

}  // namespace themegen
