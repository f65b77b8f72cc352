#include "senpa/checkpoint.hpp"

#include <fstream>

#include "senpa/binary_io.hpp"
#include "senpa/error.hpp"

namespace senpa {

namespace {

constexpr char kMagic[5] = "SPCK";
constexpr std::uint16_t kVersion = 1;

void put_string(std::ostream& out, const std::string& s) {
  binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const char* what) {
  const auto n = binary::get<std::uint32_t>(in, what);
  if (n > (1u << 28)) throw FormatError(std::string("implausible length for ") + what);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw FormatError(std::string("truncated ") + what);
  return s;
}

}  // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

template <typename T>
Checkpoint make_checkpoint(const nn::ParameterSet<T>& params, nlohmann::json config,
                           nlohmann::json meta) {
  Checkpoint ckpt;
  ckpt.config = std::move(config);
  ckpt.meta = std::move(meta);
  ckpt.optimizer_step = params.step();
  for (const auto& p : params.items()) {
    TensorRecord r;
    r.name = p.name;
    r.rows = static_cast<std::uint32_t>(p.value.rows());
    r.cols = static_cast<std::uint32_t>(p.value.cols());
    r.decay = p.decay;
    r.value.assign(p.value.values().begin(), p.value.values().end());
    r.m.assign(p.m.begin(), p.m.end());
    r.v.assign(p.v.begin(), p.v.end());
    ckpt.tensors.push_back(std::move(r));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  binary::put_magic(out, kMagic);
  binary::put<std::uint16_t>(out, kVersion);
  put_string(out, ckpt.config.dump());
  put_string(out, ckpt.meta.dump());
  binary::put<std::uint64_t>(out, ckpt.optimizer_step);
  binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put_string(out, t.name);
    binary::put<std::uint32_t>(out, t.rows);
    binary::put<std::uint32_t>(out, t.cols);
    binary::put<std::uint8_t>(out, t.decay ? 1 : 0);
    binary::put_floats(out, t.value.data(), t.value.size());
    binary::put_floats(out, t.m.data(), t.m.size());
    binary::put_floats(out, t.v.data(), t.v.size());
  }
  if (!out) throw FormatError("failed while writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::string name = path.string();
  binary::expect_magic(in, kMagic, name);
  const auto version = binary::get<std::uint16_t>(in, "version");
  if (version != kVersion)
    throw FormatError(name + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  try {
    ckpt.config = nlohmann::json::parse(get_string(in, "config"));
    ckpt.meta = nlohmann::json::parse(get_string(in, "meta"));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(name + ": corrupt header: " + e.what());
  }
  ckpt.optimizer_step = binary::get<std::uint64_t>(in, "optimizer step");
  const auto count = binary::get<std::uint32_t>(in, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = get_string(in, "tensor name");
    t.rows = binary::get<std::uint32_t>(in, "rows");
    t.cols = binary::get<std::uint32_t>(in, "cols");
    const auto decay = binary::get<std::uint8_t>(in, "decay flag");
    if (decay > 1) throw FormatError(name + ": corrupt decay flag");
    t.decay = decay == 1;
    const std::size_t n = static_cast<std::size_t>(t.rows) * t.cols;
    if (n > (1u << 28)) throw FormatError(name + ": implausible tensor size");
    t.value.resize(n);
    t.m.resize(n);
    t.v.resize(n);
    binary::get_floats(in, t.value.data(), n, "tensor values");
    binary::get_floats(in, t.m.data(), n, "first moments");
    binary::get_floats(in, t.v.data(), n, "second moments");
    ckpt.tensors.push_back(std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw FormatError(name + ": trailing bytes after the tensor table");
  return ckpt;
}

template <typename T>
std::size_t restore_parameters(const Checkpoint& ckpt, nn::ParameterSet<T>& params, bool strict,
                               bool with_optimizer) {
  std::size_t copied = 0;
  for (auto& p : params.items()) {
    const TensorRecord* r = ckpt.find(p.name);
    if (!r) {
      require(!strict, "checkpoint lacks parameter " + p.name);
      continue;
    }
    require(r->rows == p.value.rows() && r->cols == p.value.cols(),
            "checkpoint shape mismatch for " + p.name);
    auto dst = p.value.mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(r->value[i]);
    if (with_optimizer) {
      for (std::size_t i = 0; i < dst.size(); ++i) {
        p.m[i] = static_cast<T>(r->m[i]);
        p.v[i] = static_cast<T>(r->v[i]);
      }
    }
    ++copied;
  }
  if (with_optimizer) params.set_step(ckpt.optimizer_step);
  return copied;
}

template Checkpoint make_checkpoint<float>(const nn::ParameterSet<float>&, nlohmann::json,
                                           nlohmann::json);
template Checkpoint make_checkpoint<double>(const nn::ParameterSet<double>&, nlohmann::json,
                                            nlohmann::json);
template std::size_t restore_parameters<float>(const Checkpoint&, nn::ParameterSet<float>&, bool,
                                               bool);
template std::size_t restore_parameters<double>(const Checkpoint&, nn::ParameterSet<double>&,
                                                bool, bool);

}  // namespace senpa
