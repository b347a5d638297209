// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "dd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dd/errors.hpp"

namespace dd {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

namespace {

class Writer {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    out_ += s;
  }
  void put_doubles(const std::vector<double>& v) {
    out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> get_doubles(std::uint64_t n) {
    if (n > (in_.size() - pos_) / sizeof(double)) throw FormatError("checkpoint is truncated");
    std::vector<double> v(n);
    std::memcpy(v.data(), in_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) throw FormatError("checkpoint is truncated");
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint capture_checkpoint(const DistilledNetwork& net, const Sgd* optimizer,
                              const std::string& config_json, const std::string& phase,
                              std::uint64_t epoch) {
  Checkpoint ck;
  ck.config_json = config_json;
  ck.phase = phase;
  ck.epoch = epoch;
  for (const auto& [name, t] : net.named_parameters()) {
    ck.tensors.push_back({name, t.shape(), std::vector<double>(t.values().begin(),
                                                               t.values().end())});
  }
  if (optimizer) ck.velocity = optimizer->velocity();
  return ck;
}

void restore_checkpoint(const Checkpoint& ck, DistilledNetwork& net, Sgd* optimizer) {
  auto params = net.named_parameters();
  if (params.size() != ck.tensors.size()) {
    throw FormatError("checkpoint has " + std::to_string(ck.tensors.size()) +
                      " tensors, network has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    const auto& saved = ck.tensors[i];
    if (saved.name != name || saved.shape != t.shape()) {
      throw FormatError("checkpoint tensor " + saved.name + " " +
                        shape_to_string(saved.shape) + " does not match " + name + " " +
                        shape_to_string(t.shape()));
    }
    std::copy(saved.values.begin(), saved.values.end(), t.mutable_values().begin());
  }
  if (!optimizer) return;
  auto& velocity = optimizer->velocity();
  if (ck.velocity.empty()) {
    for (auto& v : velocity) std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  if (velocity.size() != ck.velocity.size()) {
    throw FormatError("checkpoint optimizer state has " + std::to_string(ck.velocity.size()) +
                      " buffers, optimizer has " + std::to_string(velocity.size()));
  }
  for (std::size_t i = 0; i < velocity.size(); ++i) {
    if (velocity[i].size() != ck.velocity[i].size()) {
      throw FormatError("checkpoint optimizer buffer " + std::to_string(i) + " has wrong size");
    }
    velocity[i] = ck.velocity[i];
  }
}

std::string encode_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.put<std::uint32_t>(kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put_string(ck.config_json);
  w.put_string(ck.phase);
  w.put<std::uint64_t>(ck.epoch);
  w.put_string(ck.meta.dump());
  w.put<std::uint64_t>(ck.tensors.size());
  for (const auto& t : ck.tensors) {
    w.put_string(t.name);
    w.put<std::uint64_t>(t.shape.size());
    for (std::size_t d : t.shape) w.put<std::uint64_t>(d);
    w.put_doubles(t.values);
  }
  w.put<std::uint64_t>(ck.velocity.size());
  for (const auto& v : ck.velocity) {
    w.put<std::uint64_t>(v.size());
    w.put_doubles(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.get<std::uint32_t>() != kCheckpointMagic) throw FormatError("not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config_json = r.get_string();
  ck.phase = r.get_string();
  ck.epoch = r.get<std::uint64_t>();
  try {
    ck.meta = nlohmann::json::parse(r.get_string());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.get_string();
    const auto rank = r.get<std::uint64_t>();
    if (rank > 8) throw FormatError("checkpoint tensor rank is implausible");
    std::uint64_t numel = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      t.shape.push_back(r.get<std::uint64_t>());
      numel *= t.shape.back();
    }
    t.values = r.get_doubles(numel);
    ck.tensors.push_back(std::move(t));
  }
  const auto buffers = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < buffers; ++i) {
    ck.velocity.push_back(r.get_doubles(r.get<std::uint64_t>()));
  }
  if (!r.done()) throw FormatError("checkpoint has trailing bytes");
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace dd
