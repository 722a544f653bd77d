#pragma once

namespace signformer {

// Reserved vocabulary ids, fixed at the file-format level.
constexpr int kUnkId = 0;
constexpr int kPadId = 1;
constexpr int kBosId = 2;
constexpr int kEosId = 3;
constexpr int kReservedTokens = 4;

}  // namespace signformer
