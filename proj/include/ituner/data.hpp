#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ituner/image.hpp"
#include "ituner/rng.hpp"

namespace ituner {

// --------------------------------------------------------------------------
// Scene specs: a 2x2 grid of colored shapes with a deterministic caption.
// Canonical layouts keep caption <-> scene a bijection: a lone object sits at
// (0,0); "left of" pairs occupy (0,0)/(0,1); "above" pairs occupy (0,0)/(1,0).
// --------------------------------------------------------------------------

enum class ObjShape { kCircle, kSquare, kTriangle };
enum class ObjColor { kRed, kGreen, kBlue, kYellow };
enum class Relation { kAlone, kLeftOf, kAbove };

inline const char* shape_word(ObjShape s) {
  switch (s) {
    case ObjShape::kCircle: return "circle";
    case ObjShape::kSquare: return "square";
    case ObjShape::kTriangle: return "triangle";
  }
  return "?";
}

inline const char* color_word(ObjColor c) {
  switch (c) {
    case ObjColor::kRed: return "red";
    case ObjColor::kGreen: return "green";
    case ObjColor::kBlue: return "blue";
    case ObjColor::kYellow: return "yellow";
  }
  return "?";
}

inline std::optional<ObjShape> shape_from_word(const std::string& w) {
  if (w == "circle") return ObjShape::kCircle;
  if (w == "square") return ObjShape::kSquare;
  if (w == "triangle") return ObjShape::kTriangle;
  return std::nullopt;
}

inline std::optional<ObjColor> color_from_word(const std::string& w) {
  if (w == "red") return ObjColor::kRed;
  if (w == "green") return ObjColor::kGreen;
  if (w == "blue") return ObjColor::kBlue;
  if (w == "yellow") return ObjColor::kYellow;
  return std::nullopt;
}

struct SceneObject {
  ObjColor color = ObjColor::kRed;
  ObjShape shape = ObjShape::kCircle;
  int row = 0;
  int col = 0;
};

struct SceneSpec {
  int grid = 2;
  Relation relation = Relation::kAlone;
  std::vector<SceneObject> objects;  // 1 or 2, canonical positions
  std::uint64_t seed = 0;
};

inline SceneSpec gen_scene(std::uint64_t seed) {
  Rng rng(seed ^ 0x5CE9E5EEDull);
  SceneSpec spec;
  spec.seed = seed;
  spec.relation = static_cast<Relation>(rng.below(3));
  auto draw = [&rng]() {
    SceneObject o;
    o.color = static_cast<ObjColor>(rng.below(4));
    o.shape = static_cast<ObjShape>(rng.below(3));
    return o;
  };
  SceneObject first = draw();
  spec.objects.push_back(first);
  if (spec.relation != Relation::kAlone) {
    SceneObject second = draw();
    second.row = spec.relation == Relation::kAbove ? 1 : 0;
    second.col = spec.relation == Relation::kLeftOf ? 1 : 0;
    spec.objects.push_back(second);
  }
  return spec;
}

inline std::string caption_of(const SceneSpec& spec) {
  if (spec.objects.empty()) throw std::invalid_argument("scene: no objects");
  const auto& a = spec.objects.front();
  std::string out = std::string("a ") + color_word(a.color) + " " + shape_word(a.shape);
  if (spec.relation == Relation::kAlone) return out;
  if (spec.objects.size() != 2) throw std::invalid_argument("scene: relation needs two objects");
  const auto& b = spec.objects[1];
  out += spec.relation == Relation::kLeftOf ? " left of" : " above";
  out += std::string(" a ") + color_word(b.color) + " " + shape_word(b.shape);
  return out;
}

// --------------------------------------------------------------------------
// Rendering: filled shapes on a white background, one grid cell each.
// --------------------------------------------------------------------------

namespace detail {

inline std::array<std::uint8_t, 3> color_rgb(ObjColor c) {
  switch (c) {
    case ObjColor::kRed: return {220, 40, 40};
    case ObjColor::kGreen: return {40, 180, 60};
    case ObjColor::kBlue: return {40, 70, 220};
    case ObjColor::kYellow: return {235, 200, 30};
  }
  return {0, 0, 0};
}

inline bool inside_shape(ObjShape shape, double u, double v) {
  // (u, v) in [0,1]^2 within the cell.
  switch (shape) {
    case ObjShape::kCircle:
      return (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5) <= 0.34 * 0.34;
    case ObjShape::kSquare:
      return u >= 0.2 && u <= 0.8 && v >= 0.2 && v <= 0.8;
    case ObjShape::kTriangle: {
      if (v < 0.15 || v > 0.85) return false;
      const double t = (v - 0.15) / 0.7;  // 0 at apex, 1 at base
      return std::abs(u - 0.5) <= 0.42 * t;
    }
  }
  return false;
}

}  // namespace detail

inline RawImage render(const SceneSpec& spec, std::size_t image_size = 32) {
  if (spec.grid <= 0) throw std::invalid_argument("scene: bad grid");
  RawImage img;
  img.width = img.height = image_size;
  img.rgb.assign(image_size * image_size * 3, 255);
  const std::size_t cell = image_size / static_cast<std::size_t>(spec.grid);
  for (const auto& obj : spec.objects) {
    const auto rgb = detail::color_rgb(obj.color);
    const std::size_t oy = static_cast<std::size_t>(obj.row) * cell;
    const std::size_t ox = static_cast<std::size_t>(obj.col) * cell;
    for (std::size_t y = 0; y < cell; ++y)
      for (std::size_t x = 0; x < cell; ++x) {
        const double u = (static_cast<double>(x) + 0.5) / cell;
        const double v = (static_cast<double>(y) + 0.5) / cell;
        if (detail::inside_shape(obj.shape, u, v)) {
          std::uint8_t* px = img.pixel(oy + y, ox + x);
          px[0] = rgb[0];
          px[1] = rgb[1];
          px[2] = rgb[2];
        }
      }
  }
  return img;
}

// --------------------------------------------------------------------------
// Vocabulary: the closed template language plus PAD/BOS/EOS.
// --------------------------------------------------------------------------

inline std::vector<std::string> template_words() {
  return {"a", "above", "blue", "circle", "green", "left",
          "of", "red", "square", "triangle", "yellow"};
}

class Vocabulary {
 public:
  Vocabulary() {
    add("<pad>");
    add("<bos>");
    add("<eos>");
    for (const auto& w : template_words()) add(w);
  }

  int pad_id() const { return 0; }
  int bos_id() const { return 1; }
  int eos_id() const { return 2; }
  std::size_t size() const { return words_.size(); }

  int id_of(const std::string& w) const {
    auto it = ids_.find(w);
    if (it == ids_.end()) throw std::invalid_argument("vocab: unknown word '" + w + "'");
    return it->second;
  }

  const std::string& word_of(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
      throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
    return words_[static_cast<std::size_t>(id)];
  }

  std::vector<int> tokenize(const std::string& text) const {
    std::vector<int> out;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) out.push_back(id_of(w));
    return out;
  }

  std::string detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ' ';
      out += word_of(ids[i]);
    }
    return out;
  }

  // BOS + caption + EOS, the teacher-forcing layout.
  std::vector<int> encode_caption(const std::string& caption) const {
    std::vector<int> out{bos_id()};
    for (int id : tokenize(caption)) out.push_back(id);
    out.push_back(eos_id());
    return out;
  }

  // Strips specials; stops at EOS.
  std::string decode_caption(const std::vector<int>& ids) const {
    std::vector<int> body;
    for (int id : ids) {
      if (id == eos_id()) break;
      if (id == bos_id() || id == pad_id()) continue;
      body.push_back(id);
    }
    return detokenize(body);
  }

 private:
  void add(const std::string& w) {
    ids_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(w);
  }

  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
};

// --------------------------------------------------------------------------
// Caption parsing and attribute accuracy.
// --------------------------------------------------------------------------

struct ParsedCaption {
  std::vector<std::pair<ObjColor, ObjShape>> objects;
  Relation relation = Relation::kAlone;
  bool well_formed = false;
};

// Lenient parse against the template grammar:
//   a <color> <shape> [ (left of | above) a <color> <shape> ]
// Returns whatever prefix structure matches; well_formed is true only for a
// complete, exact match.
inline ParsedCaption parse_caption(const std::string& text) {
  std::vector<std::string> words;
  {
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) words.push_back(w);
  }
  ParsedCaption out;
  auto object_at = [&](std::size_t i) -> std::optional<std::pair<ObjColor, ObjShape>> {
    if (i + 3 > words.size()) return std::nullopt;
    if (words[i] != "a") return std::nullopt;
    auto c = color_from_word(words[i + 1]);
    auto s = shape_from_word(words[i + 2]);
    if (!c || !s) return std::nullopt;
    return std::make_pair(*c, *s);
  };
  auto first = object_at(0);
  if (!first) return out;
  out.objects.push_back(*first);
  if (words.size() == 3) {
    out.relation = Relation::kAlone;
    out.well_formed = true;
    return out;
  }
  std::size_t i = 3;
  if (i + 1 < words.size() && words[i] == "left" && words[i + 1] == "of") {
    out.relation = Relation::kLeftOf;
    i += 2;
  } else if (words[i] == "above") {
    out.relation = Relation::kAbove;
    i += 1;
  } else {
    return out;  // unparseable tail
  }
  auto second = object_at(i);
  if (!second) return out;
  out.objects.push_back(*second);
  out.well_formed = (i + 3 == words.size());
  return out;
}

// Inverse of caption_of on canonical scenes.
inline std::optional<SceneSpec> spec_from_caption(const std::string& text) {
  ParsedCaption p = parse_caption(text);
  if (!p.well_formed) return std::nullopt;
  SceneSpec spec;
  spec.relation = p.relation;
  SceneObject a{p.objects[0].first, p.objects[0].second, 0, 0};
  spec.objects.push_back(a);
  if (p.objects.size() == 2) {
    SceneObject b{p.objects[1].first, p.objects[1].second,
                  p.relation == Relation::kAbove ? 1 : 0,
                  p.relation == Relation::kLeftOf ? 1 : 0};
    spec.objects.push_back(b);
  }
  return spec;
}

// Fraction of the scene's color/shape attribute slots the prediction realizes
// (two slots per ground-truth object, matched positionally; the relation
// word orders the objects but is not itself a counted slot). An unparseable
// prediction simply scores 0 on every slot it fails to provide.
inline double attribute_accuracy(const std::string& predicted, const SceneSpec& spec) {
  if (spec.objects.empty()) throw std::invalid_argument("scene: no objects");
  const ParsedCaption p = parse_caption(predicted);
  const std::size_t slots = 2 * spec.objects.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    if (i >= p.objects.size()) break;
    if (p.objects[i].first == spec.objects[i].color) ++correct;
    if (p.objects[i].second == spec.objects[i].shape) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(slots);
}

}  // namespace ituner
