#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "t2i/tensor.hpp"

namespace t2i {

enum class ShapeKind { kCircle, kSquare, kTriangle };
enum class Color { kRed, kGreen, kBlue, kYellow };
enum class SizeKind { kSmall, kLarge };
enum class Slot { kTopLeft, kTopRight, kBottomLeft, kBottomRight, kCenter };
enum class Verbosity { kShort, kMedium, kLong };
enum class Split { kTrain, kEval };

inline constexpr int kNumShapes = 3;
inline constexpr int kNumColors = 4;
inline constexpr int kNumSlots = 5;
inline constexpr int kNumClasses = kNumShapes * kNumColors;
inline constexpr int kMaxObjects = 4;
inline constexpr int kDefaultCanvas = 32;

struct ObjectSpec {
  ShapeKind shape = ShapeKind::kCircle;
  Color color = Color::kRed;
  SizeKind size = SizeKind::kSmall;
  Slot position = Slot::kCenter;

  bool operator==(const ObjectSpec&) const = default;
  // Class index used by the semantic encoder's pretraining task.
  int class_id() const { return static_cast<int>(shape) * kNumColors + static_cast<int>(color); }
};

// A scene: 1..4 objects in distinct slots on a square power-of-two canvas.
// objects[0] is the dominant object and is drawn on top.
class SceneSpec {
 public:
  SceneSpec(std::vector<ObjectSpec> objects, int canvas_size, std::uint64_t seed);

  // Random scene, a pure function of (seed, canvas_size).
  static SceneSpec random(std::uint64_t seed, int canvas_size = kDefaultCanvas);

  const std::vector<ObjectSpec>& objects() const { return objects_; }
  int canvas_size() const { return canvas_; }
  std::uint64_t seed() const { return seed_; }
  const ObjectSpec& dominant() const { return objects_.front(); }

 private:
  std::vector<ObjectSpec> objects_;
  int canvas_;
  std::uint64_t seed_;
};

struct Box {
  int x0, y0, x1, y1;  // inclusive pixel bounds
};
Box object_box(const ObjectSpec& obj, int canvas_size);

// ---------------------------------------------------------------------------
// Vocabulary and captions
// ---------------------------------------------------------------------------

inline constexpr int kPadToken = 0;
inline constexpr int kEndToken = 1;
inline constexpr int kMaxCaptionTokens = 16;
inline constexpr int kMinCaptionTokens = 3;

int vocab_size();
std::string_view token_word(int id);
// Throws std::out_of_range naming the word when it is not in the vocabulary.
int token_id(std::string_view word);

std::string_view word_for(ShapeKind s);
std::string_view word_for(Color c);
std::string_view word_for(SizeKind s);

struct Caption {
  std::vector<int> tokens;  // words followed by kEndToken, unpadded
  std::string raw_text;     // words only

  // Tokens right-padded with kPadToken to kMaxCaptionTokens.
  std::array<int, kMaxCaptionTokens> padded() const;
  std::size_t length() const { return tokens.size(); }
};

// Builds a caption from free text over the closed vocabulary.
Caption tokenize(std::string_view text);

// Templated caption. short: "<color> <shape>"; medium adds size and position;
// long adds the remaining objects and filler adjectives. `max_tokens` (counting
// the terminator) caps long captions; it is raised to the medium length if
// smaller.
Caption caption_for(const SceneSpec& spec, Verbosity verbosity, int max_tokens = kMaxCaptionTokens);

// Maps a target token budget to a caption: <=3 short, <=6 medium, else long
// capped at the budget.
Caption caption_with_budget(const SceneSpec& spec, int max_tokens);

// ---------------------------------------------------------------------------
// Rendering and structure priors
// ---------------------------------------------------------------------------

std::array<float, 3> rgb(Color c);

// Hard-edged raster: RGB, channels-first, values in {0,1}; black background.
ImageTensor render_scene(const SceneSpec& spec);

// Single-channel edge map with values in [0,1].
struct StructurePrior {
  ImageTensor edge_map;
};

// Sobel magnitude of the luminance normalized to max 1 (all-zero if flat).
StructurePrior edge_prior(const ImageTensor& image);

// ---------------------------------------------------------------------------
// Corpus on disk
// ---------------------------------------------------------------------------

struct ManifestRecord {
  std::string image_path;  // relative to the manifest directory
  std::string edge_path;
  std::string caption_text;
  std::vector<int> caption_tokens;
  Split split = Split::kTrain;
  std::uint64_t scene_seed = 0;
};

struct CorpusManifest {
  std::uint64_t seed = 0;
  int canvas_size = kDefaultCanvas;
  std::vector<ManifestRecord> records;
  std::filesystem::path root;  // directory containing manifest.json (not serialized)

  std::size_t count(Split s) const;
  std::string to_json() const;
  static CorpusManifest from_json(std::string_view text, std::filesystem::path root);
  static CorpusManifest load(const std::filesystem::path& dir);
};

struct CorpusOptions {
  int canvas_size = kDefaultCanvas;
  bool overwrite = false;
};

// Split rule: every tenth scene (index % 10 == 9) is held out.
Split split_for_index(std::size_t index);
std::uint64_t scene_seed_for(std::uint64_t corpus_seed, std::size_t index);

// Writes images/NNNNNN.ppm, edges/NNNNNN.pgm and manifest.json under out_dir.
// Refuses a directory that already holds a manifest unless overwrite is set.
CorpusManifest generate_corpus(std::size_t count, std::uint64_t seed,
                               const std::filesystem::path& out_dir, const CorpusOptions& opts = {});

// In-memory view of one corpus item.
struct CorpusItem {
  ImageTensor image;
  ImageTensor edge;  // single channel
  Caption caption;
  SceneSpec scene;
  Split split = Split::kTrain;
  std::uint64_t scene_seed = 0;
};

struct Corpus {
  int canvas_size = kDefaultCanvas;
  std::vector<CorpusItem> items;

  std::vector<std::size_t> indices(Split s) const;
};

// Loads images and priors from disk (8-bit quantized).
Corpus load_corpus(const CorpusManifest& manifest);
// Builds the same corpus in memory without touching disk (values quantized
// exactly as the on-disk round-trip would).
Corpus build_corpus(std::size_t count, std::uint64_t seed, int canvas_size = kDefaultCanvas);
// Replaces every caption with caption_with_budget(scene, max_tokens).
void recaption(Corpus& corpus, int max_tokens);

}  // namespace t2i
