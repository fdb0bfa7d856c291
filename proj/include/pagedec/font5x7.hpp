// Copyright 2026 the pagedec authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>

namespace pagedec {

// Built-in 5x7 bitmap font covering ASCII 0x20..0x7E. Each glyph is five
// column bytes; bit r of a column is row r, top to bottom.
inline constexpr int kGlyphCols = 5;
inline constexpr int kGlyphRows = 7;

/// Column data for c, or nullptr when the character has no glyph.
const uint8_t* glyph5x7(char32_t c);

}  // namespace pagedec
