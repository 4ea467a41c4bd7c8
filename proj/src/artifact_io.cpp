#include "lightpeft/artifact_io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <system_error>

#include "lightpeft/errors.hpp"
#include "lightpeft/fm_prune.hpp"

namespace lightpeft {

static_assert(std::endian::native == std::endian::little, "the LPFT writer assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'L', 'P', 'F', 'T'};
constexpr std::uint32_t kKindCheckpoint = 1;
constexpr std::uint32_t kKindFoundation = 2;
constexpr std::size_t kHeaderBytes = 12;  // magic, version, kind
constexpr std::size_t kTrailerBytes = 8;

class Writer {
 public:
  explicit Writer(std::uint32_t kind) {
    buf_.append(kMagic, 4);
    u32(kFormatVersion);
    u32(kind);
  }

  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    buf_.append(s);
  }
  void sizes(const std::vector<std::size_t>& v) {
    u64(v.size());
    for (std::size_t x : v) u64(x);
  }
  void doubles(std::span<const double> v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
  void tensor(const Tensor& t) {
    sizes(t.shape());
    raw(t.data().data(), t.numel() * sizeof(double));
  }

  std::string finish() {
    const std::uint64_t sum = fnv1a64(buf_.data(), buf_.size());
    u64(sum);
    return std::move(buf_);
  }
  std::size_t size() const { return buf_.size(); }

 private:
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::uint32_t expected_kind) : bytes_(bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
      throw BadMagicError("not an LPFT file (bad magic bytes)");
    }
    if (bytes.size() < 8) throw ChecksumError("file truncated inside the header");
    pos_ = 4;
    const std::uint32_t version = u32();
    if (version != kFormatVersion) {
      throw BadVersionError("unsupported LPFT format version " + std::to_string(version) + " (expected " +
                            std::to_string(kFormatVersion) + ")");
    }
    if (bytes.size() < kHeaderBytes + kTrailerBytes) throw ChecksumError("file truncated; checksum missing");
    end_ = bytes.size() - kTrailerBytes;
    std::uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + end_, sizeof stored);
    if (fnv1a64(bytes.data(), end_) != stored) throw ChecksumError("checksum mismatch; file is corrupt or truncated");
    const std::uint32_t kind = u32();
    if (kind != expected_kind) {
      throw LoadError("LPFT file holds record kind " + std::to_string(kind) + ", expected " +
                      std::to_string(expected_kind));
    }
  }

  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  std::size_t count(std::size_t elem_bytes) {
    const std::uint64_t n = u64();
    if (elem_bytes && n > (end_ - pos_) / elem_bytes) throw LoadError("length field exceeds the file size");
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    const std::size_t n = count(1);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<std::size_t> sizes() {
    std::vector<std::size_t> v(count(8));
    for (auto& x : v) x = static_cast<std::size_t>(u64());
    return v;
  }
  std::vector<double> doubles() {
    std::vector<double> v(count(8));
    raw(v.data(), v.size() * sizeof(double));
    return v;
  }
  Tensor tensor(bool requires_grad) {
    Shape shape = sizes();
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d != 0 && n > (end_ - pos_) / d) throw LoadError("tensor shape exceeds the file size");
      n *= d;
    }
    std::vector<double> v(n);
    raw(v.data(), n * sizeof(double));
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
  }
  void done() const {
    if (pos_ != end_) throw LoadError("trailing bytes after the LPFT payload");
  }

 private:
  void raw(void* p, std::size_t n) {
    if (n > end_ - pos_) throw LoadError("unexpected end of LPFT payload");
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

void put_config(Writer& w, const ModelConfig& c) {
  for (std::size_t v : {c.layers, c.hidden, c.heads, c.ffn_dim, c.vocab_size, c.max_seq, c.num_classes}) w.u64(v);
  w.u32(static_cast<std::uint32_t>(c.activation));
  w.u32(c.causal ? 1 : 0);
  w.f64(c.ln_eps);
}

ModelConfig get_config(Reader& r) {
  ModelConfig c;
  for (std::size_t* v : {&c.layers, &c.hidden, &c.heads, &c.ffn_dim, &c.vocab_size, &c.max_seq, &c.num_classes}) {
    *v = static_cast<std::size_t>(r.u64());
  }
  const std::uint32_t act = r.u32();
  if (act > static_cast<std::uint32_t>(Activation::gelu)) throw LoadError("unknown activation code");
  c.activation = static_cast<Activation>(act);
  c.causal = r.u32() != 0;
  c.ln_eps = r.f64();
  try {
    c.validate();
  } catch (const Error& e) {
    throw LoadError(std::string("stored model config is invalid: ") + e.what());
  }
  return c;
}

void put_nested(Writer& w, const std::vector<std::vector<std::size_t>>& v) {
  w.u64(v.size());
  for (const auto& x : v) w.sizes(x);
}

std::vector<std::vector<std::size_t>> get_nested(Reader& r) {
  std::vector<std::vector<std::size_t>> v(r.count(8));
  for (auto& x : v) x = r.sizes();
  return v;
}

void put_module(Writer& w, const PeftModule& m) {
  w.u32(static_cast<std::uint32_t>(m.kind));
  w.u64(m.attach.layer);
  w.u32(static_cast<std::uint32_t>(m.attach.site));
  w.u64(m.rank);
  w.f64(m.scale);
  w.sizes(m.active_ranks);
  w.tensor(m.w_down);
  w.tensor(m.w_up);
}

PeftModule get_module(Reader& r) {
  PeftModule m;
  const std::uint32_t kind = r.u32();
  if (kind > static_cast<std::uint32_t>(PeftKind::adapter)) throw LoadError("unknown PEFT kind code");
  m.kind = static_cast<PeftKind>(kind);
  m.attach.layer = static_cast<std::size_t>(r.u64());
  const std::uint32_t site = r.u32();
  if (site > static_cast<std::uint32_t>(Site::after_ffn)) throw LoadError("unknown PEFT site code");
  m.attach.site = static_cast<Site>(site);
  m.rank = static_cast<std::size_t>(r.u64());
  m.scale = r.f64();
  m.active_ranks = r.sizes();
  m.w_down = r.tensor(true);
  m.w_up = r.tensor(true);
  if (m.w_down.rank() != 2 || m.w_up.rank() != 2 || m.w_down.dim(1) != m.active_ranks.size() ||
      m.w_up.dim(0) != m.active_ranks.size()) {
    throw LoadError("PEFT factor shapes disagree with the stored rank list");
  }
  return m;
}

std::vector<Tensor> encoder_tensors(const FoundationModel& m) {
  std::vector<Tensor> t{m.token_embedding, m.position_embedding};
  for (const LayerWeights& l : m.layers) {
    for (const Tensor* p : {&l.ln1_gain, &l.ln1_bias, &l.w_q, &l.w_k, &l.w_v, &l.w_o, &l.ln2_gain, &l.ln2_bias,
                            &l.w_fc1, &l.w_fc2}) {
      t.push_back(*p);
    }
  }
  t.push_back(m.final_gain);
  t.push_back(m.final_bias);
  return t;
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t foundation_fingerprint(const FoundationModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& t : encoder_tensors(model)) {
    h = fnv1a64(t.data().data(), t.numel() * sizeof(double), h);
  }
  return h;
}

Checkpoint make_checkpoint(const FoundationModel& model, const PeftSet& peft, const PruningPlan& plan,
                           const MaskSet* dense_masks) {
  Checkpoint c;
  c.config = model.config;
  c.plan = plan;
  for (std::size_t l = 0; l < plan.heads.size(); ++l) {
    std::vector<double> h, f;
    for (std::size_t i : plan.heads[l]) h.push_back(dense_masks ? dense_masks->head.at(l).at(i) : 1.0);
    for (std::size_t i : plan.ffn[l]) f.push_back(dense_masks ? dense_masks->ffn.at(l).at(i) : 1.0);
    c.head_masks.push_back(std::move(h));
    c.ffn_masks.push_back(std::move(f));
  }
  c.peft = peft.clone();
  c.classifier_weight = model.classifier_weight.clone();
  c.classifier_bias = model.classifier_bias.clone();
  return c;
}

std::string encode_checkpoint(const Checkpoint& c) {
  Writer w(kKindCheckpoint);
  put_config(w, c.config);
  put_nested(w, c.plan.heads);
  put_nested(w, c.plan.ffn);
  w.sizes(c.plan.kept_modules);
  put_nested(w, c.plan.kept_ranks);
  w.u64(c.head_masks.size());
  for (const auto& v : c.head_masks) w.doubles(v);
  w.u64(c.ffn_masks.size());
  for (const auto& v : c.ffn_masks) w.doubles(v);
  w.u64(c.peft.modules.size());
  for (const PeftModule& m : c.peft.modules) put_module(w, m);
  w.tensor(c.classifier_weight);
  w.tensor(c.classifier_bias);
  return w.finish();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes, kKindCheckpoint);
  Checkpoint c;
  c.config = get_config(r);
  c.plan.heads = get_nested(r);
  c.plan.ffn = get_nested(r);
  c.plan.kept_modules = r.sizes();
  c.plan.kept_ranks = get_nested(r);
  c.head_masks.resize(r.count(8));
  for (auto& v : c.head_masks) v = r.doubles();
  c.ffn_masks.resize(r.count(8));
  for (auto& v : c.ffn_masks) v = r.doubles();
  c.peft.modules.resize(r.count(8));
  for (PeftModule& m : c.peft.modules) m = get_module(r);
  c.classifier_weight = r.tensor(true);
  c.classifier_bias = r.tensor(true);
  r.done();
  try {
    c.plan.foundation_layout().validate(c.config);
  } catch (const Error& e) {
    throw LoadError(std::string("stored plan is invalid: ") + e.what());
  }
  for (std::size_t l = 0; l < c.plan.heads.size(); ++l) {
    if (c.head_masks.size() != c.plan.heads.size() || c.ffn_masks.size() != c.plan.ffn.size() ||
        c.head_masks[l].size() != c.plan.heads[l].size() || c.ffn_masks[l].size() != c.plan.ffn[l].size()) {
      throw LoadError("stored mask values do not match the plan");
    }
  }
  return c;
}

std::string encode_foundation(const FoundationModel& model) {
  Writer w(kKindFoundation);
  put_config(w, model.config);
  put_nested(w, model.layout.heads);
  put_nested(w, model.layout.ffn);
  for (const Tensor& t : encoder_tensors(model)) w.tensor(t);
  w.tensor(model.classifier_weight);
  w.tensor(model.classifier_bias);
  return w.finish();
}

FoundationModel decode_foundation(const std::string& bytes) {
  Reader r(bytes, kKindFoundation);
  FoundationModel m;
  m.config = get_config(r);
  m.layout.heads = get_nested(r);
  m.layout.ffn = get_nested(r);
  try {
    m.layout.validate(m.config);
  } catch (const Error& e) {
    throw LoadError(std::string("stored layout is invalid: ") + e.what());
  }
  m.token_embedding = r.tensor(false);
  m.position_embedding = r.tensor(false);
  m.layers.resize(m.config.layers);
  for (LayerWeights& l : m.layers) {
    for (Tensor* p : {&l.ln1_gain, &l.ln1_bias, &l.w_q, &l.w_k, &l.w_v, &l.w_o, &l.ln2_gain, &l.ln2_bias,
                      &l.w_fc1, &l.w_fc2}) {
      *p = r.tensor(false);
    }
  }
  m.final_gain = r.tensor(false);
  m.final_bias = r.tensor(false);
  m.classifier_weight = r.tensor(true);
  m.classifier_bias = r.tensor(true);
  r.done();
  if (foundation_param_count(m.config, m.layout) != [&] {
        std::size_t n = 0;
        for (const Tensor& t : encoder_tensors(m)) n += t.numel();
        return n;
      }()) {
    throw LoadError("stored tensor sizes disagree with the stored layout");
  }
  return m;
}

PayloadSizes payload_sizes(const Checkpoint& c) {
  PayloadSizes s;
  for (const auto& v : c.head_masks) s.mask_bytes += v.size() * sizeof(double);
  for (const auto& v : c.ffn_masks) s.mask_bytes += v.size() * sizeof(double);
  for (const PeftModule& m : c.peft.modules) s.peft_bytes += m.param_count() * sizeof(double);
  return s;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error("cannot move " + tmp.string() + " to " + path.string());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file_atomic(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

void save_foundation(const std::filesystem::path& path, const FoundationModel& model) {
  write_file_atomic(path, encode_foundation(model));
}

FoundationModel load_foundation(const std::filesystem::path& path) { return decode_foundation(read_file(path)); }

namespace {

void require_compatible(const char* what, const std::vector<std::vector<std::size_t>>& have,
                        const std::vector<std::vector<std::size_t>>& want) {
  for (std::size_t l = 0; l < std::max(have.size(), want.size()); ++l) {
    if (l >= have.size() || l >= want.size()) {
      throw CompatibilityError(std::string(what) + " keep-sets cover " + std::to_string(have.size()) + " vs " +
                               std::to_string(want.size()) + " layers");
    }
    for (std::size_t i = 0; i < std::max(have[l].size(), want[l].size()); ++i) {
      if (i >= have[l].size() || i >= want[l].size() || have[l][i] != want[l][i]) {
        auto show = [i](const std::vector<std::size_t>& v) {
          return i < v.size() ? std::to_string(v[i]) : std::string("<none>");
        };
        throw CompatibilityError(std::string(what) + " keep-set differs at layer " + std::to_string(l) +
                                 ", position " + std::to_string(i) + ": base has " + show(have[l]) +
                                 ", adapter has " + show(want[l]));
      }
    }
  }
}

}  // namespace

TaskModel swap_adapter(const FoundationModel& base, const Checkpoint& adapter) {
  if (!(base.config == adapter.config)) {
    throw CompatibilityError("adapter was trained for a different model config");
  }
  TaskModel out;
  const HeadLayout want = adapter.plan.foundation_layout();
  if (base.layout == want) {
    out.model = base.clone();
  } else if (base.layout == HeadLayout::dense(base.config)) {
    MaskSet masks = MaskSet::ones(base, false);
    for (std::size_t l = 0; l < base.config.layers; ++l) {
      auto h = masks.head[l].mutable_data();
      for (std::size_t i = 0; i < want.heads[l].size(); ++i) h[want.heads[l][i]] = adapter.head_masks[l][i];
      auto f = masks.ffn[l].mutable_data();
      for (std::size_t i = 0; i < want.ffn[l].size(); ++i) f[want.ffn[l][i]] = adapter.ffn_masks[l][i];
    }
    out.model = materialize(base, adapter.plan, &masks);
  } else {
    require_compatible("head", base.layout.heads, want.heads);
    require_compatible("FFN", base.layout.ffn, want.ffn);
  }
  out.model.classifier_weight = adapter.classifier_weight.clone();
  out.model.classifier_bias = adapter.classifier_bias.clone();
  out.peft = adapter.peft.clone();
  for (const PeftModule& m : out.peft.modules) {
    const auto [d_in, d_out] = site_dims(out.model, m.attach);
    if (m.attach.layer >= base.config.layers || m.d_in() != d_in || m.d_out() != d_out) {
      throw CompatibilityError("PEFT module at layer " + std::to_string(m.attach.layer) + " site " +
                               to_string(m.attach.site) + " does not fit the assembled model");
    }
  }
  return out;
}

// ---- config text ----

namespace {

using Setter = std::function<void(RunConfig&, const std::string&)>;

struct FieldError {
  std::string message;
};

double parse_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) throw FieldError{key + ": '" + v + "' is not a number"};
  return x;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw FieldError{key + ": '" + v + "' is not a nonnegative integer"};
  }
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw FieldError{key + ": '" + v + "' is not a boolean"};
}

Setter rate(double TrainConfig::*field) {
  return [field](RunConfig& c, const std::string& v) {
    const double x = parse_double("", v);
    if (!(x >= 0.0 && x < 1.0)) throw FieldError{"value " + v + " outside [0, 1)"};
    c.train.*field = x;
  };
}

template <class Section, class T>
Setter positive_size(Section RunConfig::*section, T Section::*field) {
  return [section, field](RunConfig& c, const std::string& v) {
    const std::uint64_t x = parse_uint("", v);
    if (x == 0) throw FieldError{"value must be positive"};
    (c.*section).*field = static_cast<T>(x);
  };
}

template <class Section>
Setter positive_real(Section RunConfig::*section, double Section::*field) {
  return [section, field](RunConfig& c, const std::string& v) {
    const double x = parse_double("", v);
    if (!(x > 0.0)) throw FieldError{"value must be positive"};
    (c.*section).*field = x;
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["task"] = [](RunConfig& c, const std::string& v) {
      try {
        c.task.kind = parse_task_kind(v);
      } catch (const ConfigError& e) {
        throw FieldError{e.what()};
      }
    };
    t["vocab_size"] = positive_size(&RunConfig::task, &TaskSpec::vocab_size);
    t["seq_len"] = positive_size(&RunConfig::task, &TaskSpec::seq_len);
    t["num_classes"] = positive_size(&RunConfig::task, &TaskSpec::num_classes);
    t["train_size"] = positive_size(&RunConfig::task, &TaskSpec::train_size);
    t["eval_size"] = positive_size(&RunConfig::task, &TaskSpec::eval_size);
    t["layers"] = positive_size(&RunConfig::model, &ModelConfig::layers);
    t["hidden"] = positive_size(&RunConfig::model, &ModelConfig::hidden);
    t["heads"] = positive_size(&RunConfig::model, &ModelConfig::heads);
    t["ffn_dim"] = positive_size(&RunConfig::model, &ModelConfig::ffn_dim);
    t["activation"] = [](RunConfig& c, const std::string& v) {
      if (v == "relu") {
        c.model.activation = Activation::relu;
      } else if (v == "gelu") {
        c.model.activation = Activation::gelu;
      } else {
        throw FieldError{"expected relu or gelu, got '" + v + "'"};
      }
    };
    t["causal"] = [](RunConfig& c, const std::string& v) { c.model.causal = parse_bool("", v); };
    t["ln_eps"] = positive_real(&RunConfig::model, &ModelConfig::ln_eps);
    t["peft"] = [](RunConfig& c, const std::string& v) {
      try {
        c.peft.kind = parse_peft_kind(v);
      } catch (const ConfigError& e) {
        throw FieldError{e.what()};
      }
    };
    t["rank"] = positive_size(&RunConfig::peft, &PeftConfig::rank);
    t["scale"] = positive_real(&RunConfig::peft, &PeftConfig::scale);
    t["total_steps"] = positive_size(&RunConfig::train, &TrainConfig::total_steps);
    t["estimation_steps"] = [](RunConfig& c, const std::string& v) {
      c.train.estimation_steps = static_cast<std::size_t>(parse_uint("", v));
    };
    t["batch_size"] = positive_size(&RunConfig::train, &TrainConfig::batch_size);
    t["lr_estimation"] = positive_real(&RunConfig::train, &TrainConfig::lr_estimation);
    t["lr_finetune"] = positive_real(&RunConfig::train, &TrainConfig::lr_finetune);
    t["beta1"] = [](RunConfig& c, const std::string& v) {
      const double x = parse_double("", v);
      if (!(x >= 0.0 && x < 1.0)) throw FieldError{"value " + v + " outside [0, 1)"};
      c.train.adamw.beta1 = x;
    };
    t["beta2"] = [](RunConfig& c, const std::string& v) {
      const double x = parse_double("", v);
      if (!(x >= 0.0 && x < 1.0)) throw FieldError{"value " + v + " outside [0, 1)"};
      c.train.adamw.beta2 = x;
    };
    t["eps"] = [](RunConfig& c, const std::string& v) {
      const double x = parse_double("", v);
      if (!(x > 0.0)) throw FieldError{"value must be positive"};
      c.train.adamw.eps = x;
    };
    t["weight_decay"] = [](RunConfig& c, const std::string& v) {
      const double x = parse_double("", v);
      if (!(x >= 0.0)) throw FieldError{"value must be nonnegative"};
      c.train.adamw.weight_decay = x;
    };
    t["warmup_fraction"] = [](RunConfig& c, const std::string& v) {
      const double x = parse_double("", v);
      if (!(x >= 0.0 && x <= 1.0)) throw FieldError{"value " + v + " outside [0, 1]"};
      c.train.warmup_fraction = x;
    };
    t["rho_a"] = rate(&TrainConfig::rho_heads);
    t["rho_f"] = rate(&TrainConfig::rho_ffn);
    t["rho_m"] = rate(&TrainConfig::rho_modules);
    t["rho_r"] = rate(&TrainConfig::rho_ranks);
    t["lambda_a"] = [](RunConfig& c, const std::string& v) {
      const double x = parse_double("", v);
      if (!(x >= 0.0)) throw FieldError{"value must be nonnegative"};
      c.train.penalty.lambda_heads = x;
    };
    t["lambda_f"] = [](RunConfig& c, const std::string& v) {
      const double x = parse_double("", v);
      if (!(x >= 0.0)) throw FieldError{"value must be nonnegative"};
      c.train.penalty.lambda_ffn = x;
    };
    t["seed"] = [](RunConfig& c, const std::string& v) { c.train.seed = parse_uint("", v); };
    return t;
  }();
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (value.empty()) throw ConfigError("line " + std::to_string(line_no) + ": " + key + " has no value");
    try {
      it->second(cfg, value);
    } catch (const FieldError& e) {
      std::string msg = e.message;
      if (msg.rfind(": ", 0) == 0) msg.erase(0, 2);
      throw ConfigError("line " + std::to_string(line_no) + ": invalid " + key + ": " + msg);
    }
  }
  try {
    (void)cfg.resolved();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str());
}

void write_config(const RunConfig& c, std::ostream& out) {
  out << "task = " << to_string(c.task.kind) << '\n'
      << "vocab_size = " << c.task.vocab_size << '\n'
      << "seq_len = " << c.task.seq_len << '\n'
      << "num_classes = " << c.task.num_classes << '\n'
      << "train_size = " << c.task.train_size << '\n'
      << "eval_size = " << c.task.eval_size << '\n'
      << "layers = " << c.model.layers << '\n'
      << "hidden = " << c.model.hidden << '\n'
      << "heads = " << c.model.heads << '\n'
      << "ffn_dim = " << c.model.ffn_dim << '\n'
      << "activation = " << (c.model.activation == Activation::relu ? "relu" : "gelu") << '\n'
      << "causal = " << (c.model.causal ? "true" : "false") << '\n'
      << "ln_eps = " << num(c.model.ln_eps) << '\n'
      << "peft = " << to_string(c.peft.kind) << '\n'
      << "rank = " << c.peft.rank << '\n'
      << "scale = " << num(c.peft.scale) << '\n'
      << "total_steps = " << c.train.total_steps << '\n'
      << "estimation_steps = " << c.train.estimation_steps << '\n'
      << "batch_size = " << c.train.batch_size << '\n'
      << "lr_estimation = " << num(c.train.lr_estimation) << '\n'
      << "lr_finetune = " << num(c.train.lr_finetune) << '\n'
      << "beta1 = " << num(c.train.adamw.beta1) << '\n'
      << "beta2 = " << num(c.train.adamw.beta2) << '\n'
      << "eps = " << num(c.train.adamw.eps) << '\n'
      << "weight_decay = " << num(c.train.adamw.weight_decay) << '\n'
      << "warmup_fraction = " << num(c.train.warmup_fraction) << '\n'
      << "rho_a = " << num(c.train.rho_heads) << '\n'
      << "rho_f = " << num(c.train.rho_ffn) << '\n'
      << "rho_m = " << num(c.train.rho_modules) << '\n'
      << "rho_r = " << num(c.train.rho_ranks) << '\n'
      << "lambda_a = " << num(c.train.penalty.lambda_heads) << '\n'
      << "lambda_f = " << num(c.train.penalty.lambda_ffn) << '\n'
      << "seed = " << c.train.seed << '\n';
}

// ---- ledger TSV ----

void write_ledger(const ImportanceLedger& ledger, std::ostream& out) {
  out << "# steps_observed\t" << ledger.steps_observed << '\n';
  out << "layer\tsite\tkind\tbatches\tmean_importance\trank_importance\n";
  for (const LedgerEntry& e : ledger.entries) {
    out << e.attach.layer << '\t' << to_string(e.attach.site) << '\t' << to_string(e.kind) << '\t' << e.batches
        << '\t' << num(e.mean_importance) << '\t';
    for (std::size_t i = 0; i < e.rank_importance.size(); ++i) out << (i ? "," : "") << num(e.rank_importance[i]);
    out << '\n';
  }
}

ImportanceLedger read_ledger(std::istream& in) {
  ImportanceLedger ledger;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&line_no](const std::string& why) {
    return LoadError("ledger line " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line.rfind("# steps_observed\t", 0) == 0) {
      ledger.steps_observed = std::stoull(line.substr(17));
      continue;
    }
    if (line[0] == '#' || line.rfind("layer\t", 0) == 0) continue;
    std::vector<std::string> cols;
    std::istringstream row(line);
    for (std::string col; std::getline(row, col, '\t');) cols.push_back(col);
    if (line.back() == '\t') cols.emplace_back();
    if (cols.size() != 6) throw fail("expected 6 columns, found " + std::to_string(cols.size()));
    LedgerEntry e;
    try {
      e.attach.layer = static_cast<std::size_t>(parse_uint("layer", cols[0]));
      e.attach.site = parse_site(cols[1]);
      e.kind = parse_peft_kind(cols[2]);
      e.batches = static_cast<std::size_t>(parse_uint("batches", cols[3]));
      e.mean_importance = parse_double("mean_importance", cols[4]);
      std::istringstream ranks(cols[5]);
      for (std::string r; std::getline(ranks, r, ',');) e.rank_importance.push_back(parse_double("rank", r));
    } catch (const FieldError& err) {
      throw fail(err.message);
    } catch (const ConfigError& err) {
      throw fail(err.what());
    }
    ledger.entries.push_back(std::move(e));
  }
  return ledger;
}

}  // namespace lightpeft
