#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "mtr/errors.hpp"
#include "mtr/model/duo.hpp"
#include "mtr/model/ftt.hpp"
#include "mtr/model/mlp.hpp"

// Binary layout, all integers little-endian:
//   u8  version (1)
//   4   magic "MTRC"
//   u32 length, then that many bytes of JSON model description
//   u32 tensor count, then per tensor:
//       u32 name length, name bytes, u32 rank, u64 dims[rank], f32 values
//   u64 seed

namespace mtr::model {

inline constexpr std::uint8_t kCheckpointVersion = 1;

template <Real T>
using AnyModel = std::variant<FTTransformer<T>, DuoFTT<T>, Mlp<T>>;

namespace detail {

template <class U>
void PutLe(std::ostream& os, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) os.put(char((v >> (8 * i)) & 0xff));
}

template <class U>
U GetLe(std::istream& is) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = is.get();
    if (c == EOF) throw DataError("checkpoint: truncated file");
    v |= U(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

inline std::string GetBytes(std::istream& is, std::size_t n) {
  std::string s(n, '\0');
  if (!is.read(s.data(), std::streamsize(n))) throw DataError("checkpoint: truncated file");
  return s;
}

template <Real T>
Json Describe(const FTTransformer<T>& m) {
  return Json{{"ftt", m.config()}, {"classifier", m.has_classifier()}};
}

template <Real T>
FTTransformer<T> BuildFtt(const Json& j) {
  Rng rng(0, "checkpoint");
  FTTransformer<T> m(j.at("ftt").get<FTTConfig>(), rng);
  if (j.at("classifier").get<bool>()) m.attach_classifier(rng);
  return m;
}

}  // namespace detail

template <Real T>
void save_checkpoint(std::ostream& os, const AnyModel<T>& model, std::uint64_t seed) {
  Json desc;
  NamedParams<T> params;
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, FTTransformer<T>>) {
          desc = {{"kind", "ftt"}, {"model", detail::Describe(m)}};
        } else if constexpr (std::is_same_v<M, DuoFTT<T>>) {
          desc = {{"kind", "duo"},
                  {"arm_a", detail::Describe(m.arm_a())},
                  {"arm_b", detail::Describe(m.arm_b())}};
        } else {
          desc = {{"kind", "mlp"}, {"mlp", m.config()}};
        }
        params = m.parameters();
      },
      model);
  const std::string text = desc.dump();
  os.put(char(kCheckpointVersion));
  os.write("MTRC", 4);
  detail::PutLe<std::uint32_t>(os, std::uint32_t(text.size()));
  os.write(text.data(), std::streamsize(text.size()));
  detail::PutLe<std::uint32_t>(os, std::uint32_t(params.size()));
  for (const auto& [name, t] : params) {
    detail::PutLe<std::uint32_t>(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    detail::PutLe<std::uint32_t>(os, std::uint32_t(t.rank()));
    for (auto d : t.shape()) detail::PutLe<std::uint64_t>(os, d);
    for (T v : t.values()) detail::PutLe<std::uint32_t>(os, std::bit_cast<std::uint32_t>(float(v)));
  }
  detail::PutLe<std::uint64_t>(os, seed);
  if (!os) throw DataError("checkpoint: write failed");
}

template <Real T>
void save_checkpoint(const std::filesystem::path& path, const AnyModel<T>& model, std::uint64_t seed) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open " + path.string() + " for writing");
  save_checkpoint<T>(os, model, seed);
}

template <Real T>
struct LoadedCheckpoint {
  AnyModel<T> model;
  std::uint64_t seed = 0;
};

template <Real T>
LoadedCheckpoint<T> load_checkpoint(std::istream& is) {
  const auto version = detail::GetLe<std::uint8_t>(is);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  if (detail::GetBytes(is, 4) != "MTRC") throw DataError("checkpoint: bad magic");
  const auto text = detail::GetBytes(is, detail::GetLe<std::uint32_t>(is));
  Json desc;
  try {
    desc = Json::parse(text);
  } catch (const Json::exception& e) {
    throw DataError(std::string("checkpoint: bad model description: ") + e.what());
  }
  LoadedCheckpoint<T> out;
  const std::string kind = desc.at("kind").get<std::string>();
  if (kind == "ftt") {
    out.model = detail::BuildFtt<T>(desc.at("model"));
  } else if (kind == "duo") {
    out.model = DuoFTT<T>(detail::BuildFtt<T>(desc.at("arm_a")), detail::BuildFtt<T>(desc.at("arm_b")));
  } else if (kind == "mlp") {
    Rng rng(0, "checkpoint");
    out.model = Mlp<T>(desc.at("mlp").get<MlpConfig>(), rng);
  } else {
    throw DataError("checkpoint: unknown model kind '" + kind + "'");
  }

  std::map<std::string, Tensor<T>> by_name;
  std::visit([&](const auto& m) {
    for (auto& [n, t] : m.parameters()) by_name.emplace(n, t);
  }, out.model);
  const auto count = detail::GetLe<std::uint32_t>(is);
  if (count != by_name.size()) {
    throw DataError("checkpoint: expected " + std::to_string(by_name.size()) + " tensors, found " +
                    std::to_string(count));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = detail::GetBytes(is, detail::GetLe<std::uint32_t>(is));
    Shape shape(detail::GetLe<std::uint32_t>(is));
    for (auto& d : shape) d = detail::GetLe<std::uint64_t>(is);
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second.shape() != shape) {
      throw DataError("checkpoint: unexpected tensor '" + name + "' " + ShapeString(shape));
    }
    auto dst = it->second.mutable_values();
    for (auto& v : dst) v = T(std::bit_cast<float>(detail::GetLe<std::uint32_t>(is)));
  }
  out.seed = detail::GetLe<std::uint64_t>(is);
  return out;
}

template <Real T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path.string());
  return load_checkpoint<T>(is);
}

}  // namespace mtr::model
