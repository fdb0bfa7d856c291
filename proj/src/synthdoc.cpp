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

#include "pagedec/synthdoc.hpp"

#include "pagedec/configio.hpp"
#include "pagedec/font5x7.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace pagedec {

void SynthConfig::validate() const {
    if (glyph_height < 7) throw ConfigError("glyph height must be >= 7");
    if (min_lines < 1) throw ConfigError("min lines must be >= 1");
    if (max_lines < min_lines) throw ConfigError("max lines must be >= min lines");
    if (max_chars_per_line < 1) throw ConfigError("max chars per line must be >= 1");
    if (columns != 1 && columns != 2) throw ConfigError("column count must be 1 or 2");
    if (margin < 0) throw ConfigError("margin must be >= 0");
    if (noise < 0) throw ConfigError("noise amplitude must be >= 0");
}

namespace {

struct GlyphMetrics {
    int gh;       // glyph pixel height
    int gw;       // glyph pixel width
    int cell_w;   // horizontal advance per character
    int advance;  // vertical advance per line
};

GlyphMetrics metrics_for(const SynthConfig& cfg) {
    GlyphMetrics m;
    m.gh = cfg.glyph_height;
    m.gw = (kGlyphCols * m.gh + kGlyphRows - 1) / kGlyphRows;
    m.cell_w = m.gw + std::max(1, m.gh / 8);
    m.advance = 2 * m.gh;
    return m;
}

std::vector<std::string> corpus_words(const SynthConfig& cfg) {
    std::vector<std::string> words;
    std::istringstream in(cfg.corpus);
    std::string word;
    while (in >> word) {
        if (utf8_decode(word).size() <= static_cast<size_t>(cfg.max_chars_per_line))
            words.push_back(word);
    }
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    if (words.empty())
        throw ConfigError("corpus contains no word fitting in " +
                          std::to_string(cfg.max_chars_per_line) + " characters");
    return words;
}

std::string generate_line(const std::vector<std::string>& words, int max_chars, RngStream& rng) {
    std::string line = words[rng.next_below(words.size())];
    for (;;) {
        const std::string& next = words[rng.next_below(words.size())];
        const size_t want = utf8_decode(line).size() + 1 + utf8_decode(next).size();
        if (want > static_cast<size_t>(max_chars)) break;
        line += ' ';
        line += next;
    }
    return line;
}

void draw_glyph(GrayImage& img, const GlyphMetrics& m, int x0, int y0, char32_t c) {
    const uint8_t* cols = glyph5x7(c);
    if (cols == nullptr)
        throw ConfigError("no glyph for character '" + utf8_encode_one(c) + "'");
    for (int py = 0; py < m.gh; ++py) {
        const int sy = py * kGlyphRows / m.gh;
        for (int px = 0; px < m.gw; ++px) {
            const int sx = px * kGlyphCols / m.gw;
            if (cols[sx] & (1u << sy)) img.at(y0 + py, x0 + px) = 0;
        }
    }
}

}  // namespace

DocumentSample render_document(const SynthConfig& cfg, uint64_t sample_seed) {
    cfg.validate();
    RngStream rng(sample_seed);
    const GlyphMetrics m = metrics_for(cfg);

    std::vector<std::string> line_texts;
    if (cfg.fixed_text.has_value()) {
        std::string cur;
        for (char ch : *cfg.fixed_text) {
            if (ch == '\n') {
                line_texts.push_back(cur);
                cur.clear();
            } else {
                cur += ch;
            }
        }
        line_texts.push_back(cur);
    } else {
        const auto words = corpus_words(cfg);
        const int n =
            cfg.min_lines + static_cast<int>(rng.next_below(
                                static_cast<uint64_t>(cfg.max_lines - cfg.min_lines + 1)));
        for (int i = 0; i < n; ++i)
            line_texts.push_back(generate_line(words, cfg.max_chars_per_line, rng));
    }

    const int n_lines = static_cast<int>(line_texts.size());
    const int col_width = cfg.max_chars_per_line * m.cell_w;
    const int gutter = 2 * m.cell_w;
    const int left_count = cfg.columns == 1 ? n_lines : (n_lines + 1) / 2;
    const int rows = cfg.columns == 1 ? n_lines : std::max(left_count, n_lines - left_count);

    DocumentSample doc;
    doc.image.w = std::max(8, 2 * cfg.margin + cfg.columns * col_width + (cfg.columns - 1) * gutter);
    doc.image.h = std::max(32, 2 * cfg.margin + rows * m.advance);
    doc.image.px.assign(static_cast<size_t>(doc.image.w) * doc.image.h, 255);

    for (int i = 0; i < n_lines; ++i) {
        const int col = (cfg.columns == 2 && i >= left_count) ? 1 : 0;
        const int row = col == 0 ? i : i - left_count;
        const int x0 = cfg.margin + col * (col_width + gutter);
        const int y0 = cfg.margin + row * m.advance;
        const auto cps = utf8_decode(line_texts[i]);
        if (static_cast<int>(cps.size()) * m.cell_w > col_width ||
            x0 + static_cast<int>(cps.size()) * m.cell_w > doc.image.w)
            throw ConfigError("line overflow: \"" + line_texts[i] + "\"");
        for (size_t k = 0; k < cps.size(); ++k)
            draw_glyph(doc.image, m, x0 + static_cast<int>(k) * m.cell_w, y0, cps[k]);
        LineBox box;
        box.text = line_texts[i];
        box.x = x0;
        box.y = y0;
        box.w = cps.empty() ? 0 : static_cast<int>(cps.size()) * m.cell_w - (m.cell_w - m.gw);
        box.h = m.gh;
        doc.lines.push_back(std::move(box));
    }

    for (int i = 0; i < n_lines; ++i) {
        if (i) doc.text += '\n';
        doc.text += doc.lines[static_cast<size_t>(i)].text;
    }

    if (cfg.noise > 0) {
        for (auto& p : doc.image.px) {
            const int delta =
                static_cast<int>(rng.next_below(static_cast<uint64_t>(2 * cfg.noise + 1))) -
                cfg.noise;
            p = static_cast<uint8_t>(std::clamp(static_cast<int>(p) + delta, 0, 255));
        }
    }
    return doc;
}

void write_pgm(const std::string& path, const GrayImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P5\n" << img.w << " " << img.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
    if (!out) throw IoError("write failed for " + path);
}

GrayImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw IoError("not a binary PGM: " + path);
    int w = 0, h = 0, maxval = 0;
    in >> w >> h >> maxval;
    if (!in || w < 1 || h < 1 || maxval != 255) throw IoError("bad PGM header in " + path);
    in.get();  // single whitespace after maxval
    GrayImage img;
    img.w = w;
    img.h = h;
    img.px.resize(static_cast<size_t>(w) * h);
    in.read(reinterpret_cast<char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.px.size()))
        throw IoError("truncated PGM data in " + path);
    return img;
}

nlohmann::json synth_config_to_json(const SynthConfig& cfg) {
    nlohmann::json j{{"corpus", cfg.corpus},
                     {"glyph_height", cfg.glyph_height},
                     {"min_lines", cfg.min_lines},
                     {"max_lines", cfg.max_lines},
                     {"max_chars_per_line", cfg.max_chars_per_line},
                     {"columns", cfg.columns},
                     {"margin", cfg.margin},
                     {"noise", cfg.noise},
                     {"seed", cfg.seed}};
    if (cfg.fixed_text.has_value()) j["fixed_text"] = *cfg.fixed_text;
    return j;
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
    check_keys(j, "synth config",
               {"corpus", "glyph_height", "min_lines", "max_lines", "max_chars_per_line",
                "columns", "margin", "noise", "seed", "fixed_text"});
    SynthConfig cfg;
    if (j.contains("corpus")) cfg.corpus = j.at("corpus").get<std::string>();
    if (j.contains("glyph_height")) cfg.glyph_height = j.at("glyph_height").get<int>();
    if (j.contains("min_lines")) cfg.min_lines = j.at("min_lines").get<int>();
    if (j.contains("max_lines")) cfg.max_lines = j.at("max_lines").get<int>();
    if (j.contains("max_chars_per_line"))
        cfg.max_chars_per_line = j.at("max_chars_per_line").get<int>();
    if (j.contains("columns")) cfg.columns = j.at("columns").get<int>();
    if (j.contains("margin")) cfg.margin = j.at("margin").get<int>();
    if (j.contains("noise")) cfg.noise = j.at("noise").get<int>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
    if (j.contains("fixed_text") && !j.at("fixed_text").is_null())
        cfg.fixed_text = j.at("fixed_text").get<std::string>();
    return cfg;
}

void make_dataset(const SynthConfig& cfg, const SplitCounts& counts, const std::string& out_dir) {
    cfg.validate();
    if (counts.train <= 0) throw ConfigError("empty training split");
    if (counts.val < 0 || counts.test < 0) throw ConfigError("negative split count");

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

    nlohmann::json samples = nlohmann::json::array();
    const struct {
        const char* name;
        int count;
    } splits[] = {{"train", counts.train}, {"val", counts.val}, {"test", counts.test}};

    for (int s = 0; s < 3; ++s) {
        for (int i = 0; i < splits[s].count; ++i) {
            const uint64_t seed =
                splitmix64(splitmix64(cfg.seed + static_cast<uint64_t>(s) * 1000003ULL) +
                           static_cast<uint64_t>(i));
            const DocumentSample doc = render_document(cfg, seed);
            char name[64];
            std::snprintf(name, sizeof(name), "%s_%05d.pgm", splits[s].name, i);
            write_pgm((fs::path(out_dir) / name).string(), doc.image);

            nlohmann::json lines = nlohmann::json::array();
            for (const auto& ln : doc.lines)
                lines.push_back({{"text", ln.text}, {"box", {ln.x, ln.y, ln.w, ln.h}}});
            samples.push_back({{"file", name},
                               {"split", splits[s].name},
                               {"text", doc.text},
                               {"lines", lines}});
        }
    }

    nlohmann::json manifest{{"samples", samples}, {"config", synth_config_to_json(cfg)}};
    save_json_file((fs::path(out_dir) / "manifest.json").string(), manifest);
}

Manifest load_manifest(const std::string& dataset_dir) {
    const auto path = (fs::path(dataset_dir) / "manifest.json").string();
    const nlohmann::json j = load_json_file(path);
    check_keys(j, "manifest", {"samples", "config"});
    Manifest out;
    out.config = synth_config_from_json(j.at("config"));
    for (const auto& s : j.at("samples")) {
        check_keys(s, "manifest sample", {"file", "split", "text", "lines"});
        ManifestEntry e;
        e.file = s.at("file").get<std::string>();
        e.split = s.at("split").get<std::string>();
        e.text = s.at("text").get<std::string>();
        for (const auto& ln : s.at("lines")) {
            check_keys(ln, "manifest line", {"text", "box"});
            LineBox box;
            box.text = ln.at("text").get<std::string>();
            const auto& b = ln.at("box");
            if (!b.is_array() || b.size() != 4) throw ConfigError("bad line box in " + path);
            box.x = b[0].get<int>();
            box.y = b[1].get<int>();
            box.w = b[2].get<int>();
            box.h = b[3].get<int>();
            e.lines.push_back(std::move(box));
        }
        out.samples.push_back(std::move(e));
    }
    return out;
}

}  // namespace pagedec
