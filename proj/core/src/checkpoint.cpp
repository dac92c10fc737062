#include "etnet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "etnet/config.hpp"

namespace etnet::ckpt {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'E', 'T', 'N', 'E', 'T', 'C', 'K', 'P'};

struct Entry {
  std::string name;
  std::string kind;  // param | buffer | adam_m | adam_v
  std::array<int, 4> dims;
};

void write_raw(std::ofstream& f, const void* p, std::size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
  write_raw(f, &v, sizeof v);
}

template <typename T>
void read_pod(std::ifstream& f, T& v) {
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!f) throw std::runtime_error("checkpoint truncated");
}

}  // namespace

void save(const std::filesystem::path& path, net::Network& net, train::Adam* optimizer,
          long iteration) {
  std::vector<Entry> entries;
  std::vector<const nn::Tensor*> payload;

  net.visit_params([&](const std::string& name, nn::Param& p) {
    entries.push_back({name, "param", p.value.dims()});
    payload.push_back(&p.value);
  });
  net.visit_buffers([&](const std::string& name, nn::Tensor& b) {
    entries.push_back({name, "buffer", b.dims()});
    payload.push_back(&b);
  });
  if (optimizer) {
    optimizer->visit_moments([&](const std::string& name, nn::Tensor& m, nn::Tensor& v) {
      entries.push_back({name, "adam_m", m.dims()});
      payload.push_back(&m);
      entries.push_back({name, "adam_v", v.dims()});
      payload.push_back(&v);
    });
  }

  json meta;
  meta["version"] = kFormatVersion;
  meta["config"] = json::parse(cfg::network_config_json(net.config()));
  meta["iteration"] = iteration;
  json jentries = json::array();
  for (const auto& e : entries) {
    jentries.push_back({{"name", e.name}, {"kind", e.kind}, {"dims", e.dims}});
  }
  meta["entries"] = jentries;
  const std::string header = meta.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
  write_raw(f, kMagic, sizeof kMagic);
  write_pod(f, kFormatVersion);
  const std::uint64_t header_len = header.size();
  write_pod(f, header_len);
  write_raw(f, header.data(), header.size());
  for (const nn::Tensor* t : payload) {
    write_raw(f, t->data(), static_cast<std::size_t>(t->size()) * sizeof(double));
  }
  if (!f) throw std::runtime_error("short write on checkpoint '" + path.string() + "'");
}

Loaded load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");

  char magic[8];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("'" + path.string() + "' is not an etnet checkpoint");
  }
  std::uint32_t version = 0;
  read_pod(f, version);
  if (version != kFormatVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  std::uint64_t header_len = 0;
  read_pod(f, header_len);
  std::string header(header_len, '\0');
  f.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!f) throw std::runtime_error("checkpoint truncated");

  json meta;
  try {
    meta = json::parse(header);
  } catch (const json::parse_error&) {
    throw std::runtime_error("corrupt checkpoint header");
  }

  Loaded out;
  out.config = cfg::network_config_from_json(meta.at("config").dump());
  out.iteration = meta.at("iteration").get<long>();
  for (const auto& je : meta.at("entries")) {
    const auto name = je.at("name").get<std::string>();
    const auto kind = je.at("kind").get<std::string>();
    const auto dims = je.at("dims").get<std::array<int, 4>>();
    nn::Tensor t(dims[0], dims[1], dims[2], dims[3]);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint truncated");
    if (kind == "param") {
      out.params.emplace(name, std::move(t));
    } else if (kind == "buffer") {
      out.buffers.emplace(name, std::move(t));
    } else if (kind == "adam_m") {
      out.adam_m.emplace(name, std::move(t));
    } else if (kind == "adam_v") {
      out.adam_v.emplace(name, std::move(t));
    } else {
      throw std::runtime_error("unknown checkpoint entry kind '" + kind + "'");
    }
  }
  return out;
}

net::Network restore(const Loaded& loaded) {
  net::Network net(loaded.config, /*seed=*/0);
  std::size_t used = 0;
  net.visit_params([&](const std::string& name, nn::Param& p) {
    const auto it = loaded.params.find(name);
    if (it == loaded.params.end()) throw std::runtime_error("checkpoint missing param '" + name + "'");
    if (!p.value.same_shape(it->second)) {
      throw std::runtime_error("checkpoint shape mismatch for '" + name + "'");
    }
    p.value = it->second.clone();
    p.grad = nn::Tensor(p.value.dims()[0], p.value.dims()[1], p.value.dims()[2], p.value.dims()[3]);
    ++used;
  });
  if (used != loaded.params.size()) throw std::runtime_error("checkpoint has extra parameters");
  used = 0;
  net.visit_buffers([&](const std::string& name, nn::Tensor& b) {
    const auto it = loaded.buffers.find(name);
    if (it == loaded.buffers.end()) throw std::runtime_error("checkpoint missing buffer '" + name + "'");
    b = it->second.clone();
    ++used;
  });
  if (used != loaded.buffers.size()) throw std::runtime_error("checkpoint has extra buffers");
  return net;
}

void restore_optimizer(const Loaded& loaded, train::Adam& opt) {
  for (const auto& [name, m] : loaded.adam_m) {
    const auto it = loaded.adam_v.find(name);
    if (it == loaded.adam_v.end()) throw std::runtime_error("checkpoint moment pair incomplete");
    opt.set_moments(name, m.clone(), it->second.clone());
  }
}

}  // namespace etnet::ckpt
