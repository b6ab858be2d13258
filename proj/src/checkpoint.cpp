#include "deepred/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace deepred {

namespace {

constexpr char kModelMagic[8] = {'D', 'P', 'R', 'D', 'M', 'D', 'L', '1'};
constexpr uint32_t kVersion = 1;

constexpr uint32_t kFlagLogDecay = 1u << 0;
constexpr uint32_t kFlagMeanPooling = 1u << 2;
constexpr uint32_t kFlagTheta = 1u << 3;
constexpr uint32_t kFlagStatic = 1u << 4;
constexpr uint32_t kFlagOptimizer = 1u << 5;

struct Writer {
  std::vector<unsigned char> buf;

  void bytes(const void* p, size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf.insert(buf.end(), c, c + n);
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    u64(bits);
  }
  void tensor(const Tensor& t) {
    for (double v : t.data) f64(v);
  }
};

struct Reader {
  const unsigned char* p;
  const unsigned char* end;

  void need(size_t n) const {
    if (static_cast<size_t>(end - p) < n) throw std::runtime_error("checkpoint truncated");
  }
  void bytes(void* out, size_t n) {
    need(n);
    std::memcpy(out, p, n);
    p += n;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    p += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    p += 8;
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  void tensor(Tensor& t) {
    for (double& v : t.data) v = f64();
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, bool static_mode,
                     const AdamState* optimizer) {
  Writer w;
  w.bytes(kModelMagic, sizeof(kModelMagic));
  w.u32(kVersion);

  uint32_t flags = 0;
  if (model.cfg.delta_transform == DeltaTransform::kLogDecay) flags |= kFlagLogDecay;
  if (model.cfg.pooling == Pooling::kMean) flags |= kFlagMeanPooling;
  if (model.cfg.use_theta) flags |= kFlagTheta;
  if (static_mode) flags |= kFlagStatic;
  if (optimizer) flags |= kFlagOptimizer;
  w.u32(flags);

  w.u64(static_cast<uint64_t>(model.cfg.d));
  w.u64(static_cast<uint64_t>(model.cfg.hidden_dim()));
  w.u64(static_cast<uint64_t>(model.cfg.k));
  w.f64(model.delta_scale);
  w.u64(static_cast<uint64_t>(model.num_users));
  w.u64(static_cast<uint64_t>(model.num_items));

  auto params = const_cast<Model&>(model).parameters();
  for (const Parameter* p : params) w.tensor(p->value);

  if (optimizer) {
    if (optimizer->m.size() != params.size()) {
      throw std::invalid_argument("optimizer state does not match model parameters");
    }
    w.u64(optimizer->step);
    w.f64(optimizer->beta1);
    w.f64(optimizer->beta2);
    w.f64(optimizer->epsilon);
    for (size_t i = 0; i < params.size(); ++i) {
      w.tensor(optimizer->m[i]);
      w.tensor(optimizer->v[i]);
    }
  }

  uint32_t crc = static_cast<uint32_t>(
      crc32(0L, w.buf.data(), static_cast<uInt>(w.buf.size())));
  w.u32(crc);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(w.buf.data()),
            static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kModelMagic) + 12) throw std::runtime_error("checkpoint truncated");

  uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i) {
    stored_crc |= static_cast<uint32_t>(buf[buf.size() - 4 + i]) << (8 * i);
  }
  uint32_t actual_crc = static_cast<uint32_t>(
      crc32(0L, buf.data(), static_cast<uInt>(buf.size() - 4)));
  if (stored_crc != actual_crc) {
    throw std::runtime_error("checkpoint CRC mismatch: " + path);
  }

  Reader r{buf.data(), buf.data() + buf.size() - 4};
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kModelMagic, 8) != 0) {
    throw std::runtime_error("not a DPRDMDL1 checkpoint: " + path);
  }
  uint32_t version = r.u32();
  if (version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  uint32_t flags = r.u32();

  ModelConfig cfg;
  cfg.d = static_cast<int>(r.u64());
  cfg.hidden = static_cast<int>(r.u64());
  cfg.k = static_cast<int>(r.u64());
  cfg.delta_transform =
      (flags & kFlagLogDecay) ? DeltaTransform::kLogDecay : DeltaTransform::kRaw;
  cfg.pooling = (flags & kFlagMeanPooling) ? Pooling::kMean : Pooling::kMax;
  cfg.use_theta = (flags & kFlagTheta) != 0;
  double delta_scale = r.f64();
  int num_users = static_cast<int>(r.u64());
  int num_items = static_cast<int>(r.u64());

  Checkpoint ck;
  ck.model = make_model(cfg, num_users, num_items, /*seed=*/0);
  ck.model.delta_scale = delta_scale;
  ck.static_mode = (flags & kFlagStatic) != 0;

  auto params = ck.model.parameters();
  for (Parameter* p : params) r.tensor(p->value);

  if (flags & kFlagOptimizer) {
    AdamState st = AdamState::init(params);
    st.step = r.u64();
    st.beta1 = r.f64();
    st.beta2 = r.f64();
    st.epsilon = r.f64();
    for (size_t i = 0; i < params.size(); ++i) {
      r.tensor(st.m[i]);
      r.tensor(st.v[i]);
    }
    ck.optimizer = std::move(st);
  }
  if (r.p != r.end) throw std::runtime_error("checkpoint has trailing bytes: " + path);
  return ck;
}

}  // namespace deepred
