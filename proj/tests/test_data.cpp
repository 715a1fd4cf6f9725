#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "ituner/data.hpp"
#include "ituner/pipeline.hpp"

using namespace ituner;
using Catch::Approx;

namespace {

// Every canonical scene, enumerated: 12 singles + 144 left-of + 144 above.
std::vector<SceneSpec> all_canonical_scenes() {
  std::vector<SceneSpec> scenes;
  for (int rel = 0; rel < 3; ++rel) {
    for (int c1 = 0; c1 < 4; ++c1)
      for (int s1 = 0; s1 < 3; ++s1) {
        SceneSpec base;
        base.relation = static_cast<Relation>(rel);
        base.objects.push_back({static_cast<ObjColor>(c1), static_cast<ObjShape>(s1), 0, 0});
        if (base.relation == Relation::kAlone) {
          scenes.push_back(base);
          continue;
        }
        for (int c2 = 0; c2 < 4; ++c2)
          for (int s2 = 0; s2 < 3; ++s2) {
            SceneSpec spec = base;
            spec.objects.push_back({static_cast<ObjColor>(c2), static_cast<ObjShape>(s2),
                                    spec.relation == Relation::kAbove ? 1 : 0,
                                    spec.relation == Relation::kLeftOf ? 1 : 0});
            scenes.push_back(spec);
          }
      }
  }
  return scenes;
}

}  // namespace

TEST_CASE("caption templates") {
  SceneSpec single;
  single.relation = Relation::kAlone;
  single.objects.push_back({ObjColor::kRed, ObjShape::kCircle, 0, 0});
  REQUIRE(caption_of(single) == "a red circle");

  SceneSpec pair = single;
  pair.relation = Relation::kLeftOf;
  pair.objects.push_back({ObjColor::kBlue, ObjShape::kSquare, 0, 1});
  REQUIRE(caption_of(pair) == "a red circle left of a blue square");

  pair.relation = Relation::kAbove;
  REQUIRE(caption_of(pair) == "a red circle above a blue square");
}

TEST_CASE("same seed gives identical image bytes and caption") {
  SceneSpec a = gen_scene(123), b = gen_scene(123);
  REQUIRE(caption_of(a) == caption_of(b));
  REQUIRE(render(a).rgb == render(b).rgb);
  REQUIRE(gen_scene(124).seed != a.seed);
}

TEST_CASE("10k seeds cover every shape-color pair and every relation") {
  std::set<std::pair<int, int>> pairs;
  std::set<int> relations;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    SceneSpec spec = gen_scene(seed);
    relations.insert(static_cast<int>(spec.relation));
    for (const auto& obj : spec.objects)
      pairs.insert({static_cast<int>(obj.color), static_cast<int>(obj.shape)});
  }
  REQUIRE(pairs.size() == 12);
  REQUIRE(relations.size() == 3);
}

TEST_CASE("vocabulary: census plus three specials, round trips, errors") {
  Vocabulary vocab;
  REQUIRE(vocab.size() == template_words().size() + 3);
  REQUIRE(vocab.size() == 14);
  REQUIRE(vocab.pad_id() == 0);
  REQUIRE(vocab.bos_id() == 1);
  REQUIRE(vocab.eos_id() == 2);

  REQUIRE(vocab.tokenize("").empty());
  REQUIRE_THROWS_WITH(vocab.tokenize("a crimson circle"),
                      Catch::Matchers::ContainsSubstring("crimson"));

  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const std::string caption = caption_of(gen_scene(seed));
    REQUIRE(vocab.detokenize(vocab.tokenize(caption)) == caption);
  }

  const std::vector<int> encoded = vocab.encode_caption("a red circle");
  REQUIRE(encoded.front() == vocab.bos_id());
  REQUIRE(encoded.back() == vocab.eos_id());
  REQUIRE(vocab.decode_caption(encoded) == "a red circle");
}

TEST_CASE("spec -> caption -> parse -> spec is the identity on canonical scenes") {
  for (const auto& spec : all_canonical_scenes()) {
    const std::string caption = caption_of(spec);
    auto back = spec_from_caption(caption);
    REQUIRE(back.has_value());
    REQUIRE(back->relation == spec.relation);
    REQUIRE(back->objects.size() == spec.objects.size());
    for (std::size_t i = 0; i < spec.objects.size(); ++i) {
      REQUIRE(back->objects[i].color == spec.objects[i].color);
      REQUIRE(back->objects[i].shape == spec.objects[i].shape);
      REQUIRE(back->objects[i].row == spec.objects[i].row);
      REQUIRE(back->objects[i].col == spec.objects[i].col);
    }
  }
}

TEST_CASE("rendered cell centers match the captioned colors") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    SceneSpec spec = gen_scene(seed);
    RawImage img = render(spec, 32);
    for (const auto& obj : spec.objects) {
      const std::size_t cy = static_cast<std::size_t>(obj.row) * 16 + 8;
      const std::size_t cx = static_cast<std::size_t>(obj.col) * 16 + 8;
      const auto* px = img.pixel(cy, cx);
      // Center pixel sits inside every shape; match the dominant channel.
      switch (obj.color) {
        case ObjColor::kRed:
          REQUIRE((px[0] > px[1] && px[0] > px[2]));
          break;
        case ObjColor::kGreen:
          REQUIRE((px[1] > px[0] && px[1] > px[2]));
          break;
        case ObjColor::kBlue:
          REQUIRE((px[2] > px[0] && px[2] > px[1]));
          break;
        case ObjColor::kYellow:
          REQUIRE((px[0] > px[2] && px[1] > px[2]));
          break;
      }
      // And it is not background white.
      REQUIRE((px[0] != 255 || px[1] != 255 || px[2] != 255));
    }
  }
}

TEST_CASE("attribute accuracy: exact match, half credit, structural misses") {
  SceneSpec two;
  two.relation = Relation::kLeftOf;
  two.objects.push_back({ObjColor::kRed, ObjShape::kCircle, 0, 0});
  two.objects.push_back({ObjColor::kBlue, ObjShape::kSquare, 0, 1});

  REQUIRE(attribute_accuracy("a red circle left of a blue square", two) == 1.0);
  // Correct shapes, wrong colors: half of the four attribute slots.
  REQUIRE(attribute_accuracy("a green circle left of a yellow square", two) == 0.5);
  // A one-object prediction can only cover the first object's slots.
  REQUIRE(attribute_accuracy("a red circle", two) == 0.5);
  REQUIRE(attribute_accuracy("complete gibberish", two) == 0.0);

  SceneSpec one;
  one.relation = Relation::kAlone;
  one.objects.push_back({ObjColor::kGreen, ObjShape::kTriangle, 0, 0});
  REQUIRE(attribute_accuracy("a green triangle", one) == 1.0);
  REQUIRE(attribute_accuracy("a green circle", one) == 0.5);
  REQUIRE(attribute_accuracy("", one) == 0.0);
}

TEST_CASE("random captions score at the analytic chance rate") {
  // Chance rate for captions of independently drawn scenes: conditioned on
  // the ground-truth arity (1/3 single, 2/3 relational) and the prediction's
  // arity, each color slot matches with probability 1/4 and each shape slot
  // with 1/3:
  //   E[acc | gt single]              = (1/4 + 1/3) / 2       = 7/24
  //   E[acc | gt pair, pred single]   = (1/4 + 1/3) / 4       = 7/48
  //   E[acc | gt pair, pred pair]     = 7/24
  //   E[acc | gt pair]                = (1/3)(7/48) + (2/3)(7/24) = 35/144
  //   E[acc] = (1/3)(7/24) + (2/3)(35/144)                    = 7/27
  const double chance = 7.0 / 27.0;
  double total = 0.0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    SceneSpec gt = gen_scene(5000 + i);
    SceneSpec random_pred = gen_scene(900000 + i);
    total += attribute_accuracy(caption_of(random_pred), gt);
  }
  REQUIRE(total / n == Approx(chance).margin(0.045));
}

TEST_CASE("manifest round trip preserves specs and captions") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "ituner_manifest_test").string();
  fs::remove_all(dir);
  auto data = make_dataset(12, 77);
  const std::string manifest = write_dataset(dir, data, 32);
  auto loaded = load_dataset(manifest);
  REQUIRE(loaded.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    REQUIRE(loaded[i].caption == data[i].caption);
    REQUIRE(loaded[i].spec.relation == data[i].spec.relation);
    REQUIRE(loaded[i].spec.objects.size() == data[i].spec.objects.size());
    RawImage img = load_ppm(loaded[i].image_path);
    REQUIRE(img.width == 32);
    REQUIRE(img.rgb == render(data[i].spec, 32).rgb);
  }
  fs::remove_all(dir);
}
