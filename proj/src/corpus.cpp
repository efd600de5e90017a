#include "t2i/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "t2i/autograd.hpp"
#include "t2i/image_io.hpp"
#include "t2i/kernels.hpp"
#include "t2i/rng.hpp"

namespace t2i {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

constexpr std::array<std::string_view, 29> kVocab = {
    "<pad>", "<end>",                                           //
    "circle", "square", "triangle",                             //
    "red", "green", "blue", "yellow",                           //
    "small", "large",                                           //
    "top", "bottom", "left", "right", "center",                 //
    "and",                                                      //
    "bright", "solid", "simple", "plain", "flat", "clean",      //
    "smooth", "vivid", "neat", "crisp", "bold", "pure"};

constexpr int kFirstFiller = 17;
constexpr int kNumFillers = static_cast<int>(kVocab.size()) - kFirstFiller;
constexpr int kLongFillers = 2;

std::vector<std::string_view> slot_words(Slot s) {
  switch (s) {
    case Slot::kTopLeft: return {"top", "left"};
    case Slot::kTopRight: return {"top", "right"};
    case Slot::kBottomLeft: return {"bottom", "left"};
    case Slot::kBottomRight: return {"bottom", "right"};
    case Slot::kCenter: return {"center"};
  }
  return {};
}

Caption from_words(const std::vector<std::string_view>& words) {
  Caption c;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) c.raw_text += ' ';
    c.raw_text += words[i];
    c.tokens.push_back(token_id(words[i]));
  }
  c.tokens.push_back(kEndToken);
  return c;
}

std::vector<std::string_view> medium_words(const ObjectSpec& o) {
  std::vector<std::string_view> w = {word_for(o.size), word_for(o.color), word_for(o.shape)};
  for (auto s : slot_words(o.position)) w.push_back(s);
  return w;
}

// Long caption: up to `fillers` filler adjectives, the dominant object's
// medium phrase, then "and <color> <shape>" for other objects while they fit.
Caption long_caption(const SceneSpec& spec, int max_tokens, int fillers) {
  const std::vector<std::string_view> core = medium_words(spec.dominant());
  const std::size_t word_budget =
      static_cast<std::size_t>(std::max<int>(max_tokens, static_cast<int>(core.size()) + 1) - 1);
  std::vector<std::string_view> tail;
  std::size_t used = core.size();
  for (std::size_t i = 1; i < spec.objects().size(); ++i) {
    if (used + 3 > word_budget) break;
    const auto& o = spec.objects()[i];
    tail.insert(tail.end(), {"and", word_for(o.color), word_for(o.shape)});
    used += 3;
  }
  std::vector<std::string_view> head;
  const int start = static_cast<int>(spec.seed() % kNumFillers);
  for (int k = 0; k < fillers && used < word_budget; ++k, ++used) {
    head.push_back(kVocab[static_cast<std::size_t>(kFirstFiller + (start + k) % kNumFillers)]);
  }
  std::vector<std::string_view> words = head;
  words.insert(words.end(), core.begin(), core.end());
  words.insert(words.end(), tail.begin(), tail.end());
  return from_words(words);
}

std::string split_name(Split s) { return s == Split::kTrain ? "train" : "eval"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "eval") return Split::kEval;
  throw std::runtime_error("manifest: unknown split '" + s + "'");
}

std::string index_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu", i);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Scenes
// ---------------------------------------------------------------------------

Box object_box(const ObjectSpec& obj, int canvas) {
  const int q = canvas / 4;
  int cx = canvas / 2, cy = canvas / 2;
  switch (obj.position) {
    case Slot::kTopLeft: cx = q; cy = q; break;
    case Slot::kTopRight: cx = 3 * q; cy = q; break;
    case Slot::kBottomLeft: cx = q; cy = 3 * q; break;
    case Slot::kBottomRight: cx = 3 * q; cy = 3 * q; break;
    case Slot::kCenter: break;
  }
  const int half = obj.size == SizeKind::kSmall ? std::max(1, canvas / 8) : std::max(1, canvas / 4 - 1);
  return Box{cx - half, cy - half, cx + half - 1, cy + half - 1};
}

SceneSpec::SceneSpec(std::vector<ObjectSpec> objects, int canvas_size, std::uint64_t seed)
    : objects_(std::move(objects)), canvas_(canvas_size), seed_(seed) {
  if (canvas_ <= 0) throw std::invalid_argument("SceneSpec: canvas size must be positive");
  if (!is_power_of_two(canvas_) || canvas_ < 8) {
    throw std::invalid_argument("SceneSpec: canvas size must be a power of two >= 8, got " +
                                std::to_string(canvas_));
  }
  if (objects_.empty() || objects_.size() > kMaxObjects) {
    throw std::invalid_argument("SceneSpec: need 1..4 objects, got " + std::to_string(objects_.size()));
  }
  for (std::size_t i = 0; i < objects_.size(); ++i) {
    for (std::size_t j = i + 1; j < objects_.size(); ++j) {
      if (objects_[i].position == objects_[j].position) {
        throw std::invalid_argument("SceneSpec: two objects share a position slot");
      }
    }
    const Box b = object_box(objects_[i], canvas_);
    if (b.x0 < 0 || b.y0 < 0 || b.x1 >= canvas_ || b.y1 >= canvas_) {
      throw std::invalid_argument("SceneSpec: object box outside canvas");
    }
  }
}

SceneSpec SceneSpec::random(std::uint64_t seed, int canvas_size) {
  Rng rng(seed);
  const int n = 1 + static_cast<int>(rng.below(kMaxObjects));
  std::array<Slot, kNumSlots> slots = {Slot::kTopLeft, Slot::kTopRight, Slot::kBottomLeft,
                                       Slot::kBottomRight, Slot::kCenter};
  for (int i = kNumSlots - 1; i > 0; --i) {
    std::swap(slots[static_cast<std::size_t>(i)], slots[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  }
  std::vector<ObjectSpec> objs;
  for (int i = 0; i < n; ++i) {
    ObjectSpec o;
    o.shape = static_cast<ShapeKind>(rng.below(kNumShapes));
    o.color = static_cast<Color>(rng.below(kNumColors));
    o.size = static_cast<SizeKind>(rng.below(2));
    o.position = slots[static_cast<std::size_t>(i)];
    objs.push_back(o);
  }
  return SceneSpec(std::move(objs), canvas_size, seed);
}

std::array<float, 3> rgb(Color c) {
  switch (c) {
    case Color::kRed: return {1.0f, 0.0f, 0.0f};
    case Color::kGreen: return {0.0f, 1.0f, 0.0f};
    case Color::kBlue: return {0.0f, 0.0f, 1.0f};
    case Color::kYellow: return {1.0f, 1.0f, 0.0f};
  }
  return {0.0f, 0.0f, 0.0f};
}

ImageTensor render_scene(const SceneSpec& spec) {
  const int n = spec.canvas_size();
  ImageTensor img(3, n, n, 0.0f);
  // Reverse order so that objects[0] ends up on top.
  for (auto it = spec.objects().rbegin(); it != spec.objects().rend(); ++it) {
    const Box b = object_box(*it, n);
    const double cx = 0.5 * (b.x0 + b.x1 + 1);
    const double cy = 0.5 * (b.y0 + b.y1 + 1);
    const double h = 0.5 * (b.x1 - b.x0 + 1);
    const auto col = rgb(it->color);
    for (int y = b.y0; y <= b.y1; ++y) {
      for (int x = b.x0; x <= b.x1; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        bool inside = false;
        switch (it->shape) {
          case ShapeKind::kSquare: inside = true; break;
          case ShapeKind::kCircle: inside = dx * dx + dy * dy <= h * h; break;
          case ShapeKind::kTriangle: inside = std::abs(dx) <= 0.5 * (dy + h); break;
        }
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[static_cast<std::size_t>(c)];
      }
    }
  }
  return img;
}

StructurePrior edge_prior(const ImageTensor& image) {
  if (image.channels != 3 && image.channels != 1) {
    throw std::invalid_argument("edge_prior: expected RGB or single-channel image");
  }
  const std::size_t plane = image.plane();
  std::vector<double> luma(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    luma[i] = image.channels == 1
                  ? image.data[i]
                  : ag::kLumaR * image.data[i] + ag::kLumaG * image.data[plane + i] +
                        ag::kLumaB * image.data[2 * plane + i];
  }
  std::vector<double> gx(plane), gy(plane), mag(plane);
  kernels::sobel_forward<double>({1, image.height, image.width}, luma, 0.0, gx, gy, mag);
  const double mx = *std::max_element(mag.begin(), mag.end());
  StructurePrior prior{ImageTensor(1, image.height, image.width, 0.0f)};
  if (mx > 0) {
    for (std::size_t i = 0; i < plane; ++i) {
      prior.edge_map.data[i] = static_cast<float>(std::clamp(mag[i] / mx, 0.0, 1.0));
    }
  }
  return prior;
}

// ---------------------------------------------------------------------------
// Vocabulary and captions
// ---------------------------------------------------------------------------

int vocab_size() { return static_cast<int>(kVocab.size()); }

std::string_view token_word(int id) {
  if (id < 0 || id >= vocab_size()) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  return kVocab[static_cast<std::size_t>(id)];
}

int token_id(std::string_view word) {
  for (std::size_t i = 0; i < kVocab.size(); ++i)
    if (kVocab[i] == word) return static_cast<int>(i);
  throw std::out_of_range("word '" + std::string(word) + "' not in vocabulary");
}

std::string_view word_for(ShapeKind s) { return kVocab[2 + static_cast<std::size_t>(s)]; }
std::string_view word_for(Color c) { return kVocab[5 + static_cast<std::size_t>(c)]; }
std::string_view word_for(SizeKind s) { return kVocab[9 + static_cast<std::size_t>(s)]; }

std::array<int, kMaxCaptionTokens> Caption::padded() const {
  std::array<int, kMaxCaptionTokens> out{};
  out.fill(kPadToken);
  for (std::size_t i = 0; i < tokens.size() && i < out.size(); ++i) out[i] = tokens[i];
  return out;
}

Caption tokenize(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) words.push_back(text.substr(i, j - i));
    i = j;
  }
  if (words.size() + 1 > kMaxCaptionTokens) {
    throw std::invalid_argument("caption longer than " + std::to_string(kMaxCaptionTokens) + " tokens");
  }
  return from_words(words);
}

Caption caption_for(const SceneSpec& spec, Verbosity verbosity, int max_tokens) {
  const ObjectSpec& d = spec.dominant();
  switch (verbosity) {
    case Verbosity::kShort: return from_words({word_for(d.color), word_for(d.shape)});
    case Verbosity::kMedium: return from_words(medium_words(d));
    case Verbosity::kLong: return long_caption(spec, std::min(max_tokens, kMaxCaptionTokens), kLongFillers);
  }
  throw std::invalid_argument("caption_for: bad verbosity");
}

Caption caption_with_budget(const SceneSpec& spec, int max_tokens) {
  if (max_tokens < kMinCaptionTokens || max_tokens > kMaxCaptionTokens) {
    throw std::invalid_argument("caption budget must be in [3,16], got " + std::to_string(max_tokens));
  }
  if (max_tokens <= 3) return caption_for(spec, Verbosity::kShort);
  if (max_tokens <= 6) return caption_for(spec, Verbosity::kMedium);
  return long_caption(spec, max_tokens, kNumFillers);
}

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

Split split_for_index(std::size_t index) { return index % 10 == 9 ? Split::kEval : Split::kTrain; }

std::uint64_t scene_seed_for(std::uint64_t corpus_seed, std::size_t index) {
  return derive_seed(corpus_seed, 0x5CE4E, index);
}

std::size_t CorpusManifest::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [s](const ManifestRecord& r) { return r.split == s; }));
}

std::string CorpusManifest::to_json() const {
  json recs = json::array();
  for (const auto& r : records) {
    recs.push_back({{"image_path", r.image_path},
                    {"edge_path", r.edge_path},
                    {"caption_text", r.caption_text},
                    {"caption_tokens", r.caption_tokens},
                    {"split", split_name(r.split)},
                    {"scene_seed", r.scene_seed}});
  }
  json j = {{"format", "t2i-corpus"}, {"version", 1}, {"seed", seed}, {"canvas_size", canvas_size},
            {"count", records.size()}, {"records", recs}};
  return j.dump(2) + "\n";
}

CorpusManifest CorpusManifest::from_json(std::string_view text, fs::path root) {
  CorpusManifest m;
  m.root = std::move(root);
  try {
    const json j = json::parse(text);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.canvas_size = j.at("canvas_size").get<int>();
    for (const auto& r : j.at("records")) {
      ManifestRecord rec;
      rec.image_path = r.at("image_path").get<std::string>();
      rec.edge_path = r.at("edge_path").get<std::string>();
      rec.caption_text = r.at("caption_text").get<std::string>();
      rec.caption_tokens = r.at("caption_tokens").get<std::vector<int>>();
      rec.split = parse_split(r.at("split").get<std::string>());
      rec.scene_seed = r.at("scene_seed").get<std::uint64_t>();
      m.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

CorpusManifest CorpusManifest::load(const fs::path& dir) {
  const fs::path file = dir / "manifest.json";
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read manifest: " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str(), dir);
}

CorpusManifest generate_corpus(std::size_t count, std::uint64_t seed, const fs::path& out_dir,
                               const CorpusOptions& opts) {
  std::error_code ec;
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !opts.overwrite) {
    throw std::runtime_error("output directory not empty (use overwrite): " + out_dir.string());
  }
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw std::runtime_error("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  fs::create_directories(out_dir / "edges", ec);
  if (ec) throw std::runtime_error("cannot create " + (out_dir / "edges").string() + ": " + ec.message());

  CorpusManifest m;
  m.seed = seed;
  m.canvas_size = opts.canvas_size;
  m.root = out_dir;
  m.records.resize(count);
  std::vector<std::string> errors(count);

  // Scenes are independent; records are assembled by index.
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < count; ++i) {
    try {
      const std::uint64_t s = scene_seed_for(seed, i);
      const SceneSpec spec = SceneSpec::random(s, opts.canvas_size);
      const ImageTensor img = render_scene(spec);
      const StructurePrior prior = edge_prior(img);
      const Caption cap = caption_for(spec, Verbosity::kLong);
      ManifestRecord& r = m.records[i];
      r.image_path = "images/" + index_name(i) + ".ppm";
      r.edge_path = "edges/" + index_name(i) + ".pgm";
      r.caption_text = cap.raw_text;
      r.caption_tokens = cap.tokens;
      r.split = split_for_index(i);
      r.scene_seed = s;
      write_pnm(out_dir / r.image_path, img);
      write_pnm(out_dir / r.edge_path, prior.edge_map);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error(e);

  const fs::path file = out_dir / "manifest.json";
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest: " + file.string());
  out << m.to_json();
  if (!out) throw std::runtime_error("write failed: " + file.string());
  return m;
}

std::vector<std::size_t> Corpus::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].split == s) out.push_back(i);
  return out;
}

Corpus load_corpus(const CorpusManifest& manifest) {
  Corpus c;
  c.canvas_size = manifest.canvas_size;
  c.items.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    CorpusItem item{read_pnm(manifest.root / r.image_path), read_pnm(manifest.root / r.edge_path),
                    Caption{}, SceneSpec::random(r.scene_seed, manifest.canvas_size), r.split, r.scene_seed};
    item.caption.tokens = r.caption_tokens;
    item.caption.raw_text = r.caption_text;
    for (int t : item.caption.tokens) token_word(t);  // validates ids
    if (item.image.channels != 3 || item.edge.channels != 1 || item.image.height != manifest.canvas_size ||
        !(item.edge.height == item.image.height && item.edge.width == item.image.width)) {
      throw std::runtime_error("corpus item has unexpected shape: " + r.image_path);
    }
    c.items.push_back(std::move(item));
  }
  return c;
}

Corpus build_corpus(std::size_t count, std::uint64_t seed, int canvas_size) {
  Corpus c;
  c.canvas_size = canvas_size;
  c.items.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = scene_seed_for(seed, i);
    SceneSpec spec = SceneSpec::random(s, canvas_size);
    ImageTensor img = render_scene(spec);
    StructurePrior prior = edge_prior(img);
    c.items.push_back(CorpusItem{quantized(img), quantized(prior.edge_map), caption_for(spec, Verbosity::kLong),
                                 std::move(spec), split_for_index(i), s});
  }
  return c;
}

void recaption(Corpus& corpus, int max_tokens) {
  for (auto& item : corpus.items) item.caption = caption_with_budget(item.scene, max_tokens);
}

}  // namespace t2i
