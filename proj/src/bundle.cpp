#include "mmfgl/bundle.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmfgl/error.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "bundle payloads are little-endian; big-endian hosts are unsupported");

namespace mmfgl {

namespace {

std::string feat_file(const std::string& modality) { return "feat_" + modality + ".f32"; }
std::string mask_file(const std::string& modality) { return "mask_" + modality + ".bits"; }

std::ifstream open_or_throw(const fs::path& path, std::ios::openmode mode) {
  if (!fs::exists(path)) throw MissingFileError("bundle file not found: " + path.string());
  std::ifstream in(path, mode);
  if (!in) throw MissingFileError("bundle file not readable: " + path.string());
  return in;
}

std::vector<char> read_all(const fs::path& path) {
  std::ifstream in = open_or_throw(path, std::ios::binary);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

// Classifies a payload size error: a whole-but-wrong number of columns is a
// shape disagreement, anything shorter that does not align to rows is a cut
// off write.
void check_payload_size(std::size_t got, std::size_t expected, std::size_t row_bytes,
                        const std::string& what) {
  if (got == expected) return;
  if (row_bytes > 0 && got % row_bytes == 0)
    throw DimensionMismatchError(what + ": payload holds " + std::to_string(got / row_bytes) +
                                 " columns worth of data, meta declares " +
                                 std::to_string(expected / row_bytes));
  if (got < expected)
    throw TruncatedPayloadError(what + ": payload has " + std::to_string(got) +
                                " bytes, expected " + std::to_string(expected));
  throw DimensionMismatchError(what + ": payload has " + std::to_string(got) +
                               " bytes, expected " + std::to_string(expected));
}

}  // namespace

void save_bundle(const MultimodalGraph& g, const std::string& dir_path) {
  validate_graph(g);
  fs::create_directories(dir_path);
  const fs::path dir(dir_path);

  json meta;
  meta["num_nodes"] = g.num_nodes;
  meta["num_edges"] = g.edges.size();
  meta["num_classes"] = g.num_classes;
  meta["endianness"] = "little";
  meta["modalities"] = json::array();
  for (const auto& m : g.modalities)
    meta["modalities"].push_back({{"name", m.name}, {"feature_dim", m.feature_dim}});
  {
    std::ofstream out(dir / "meta.json");
    out << meta.dump(2) << "\n";
  }
  {
    std::ofstream out(dir / "edges.tsv");
    for (const auto& [u, v] : g.edges) out << u << "\t" << v << "\n";
  }
  {
    std::ofstream out(dir / "labels.tsv");
    for (std::size_t i = 0; i < g.labels.size(); ++i)
      if (g.labels[i] != kUnlabeled) out << i << "\t" << g.labels[i] << "\n";
  }
  for (std::size_t m = 0; m < g.modalities.size(); ++m) {
    std::ofstream out(dir / feat_file(g.modalities[m].name), std::ios::binary);
    const auto& data = g.features[m].data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));

    std::vector<std::uint8_t> bits((g.num_nodes + 7) / 8, 0);
    for (std::size_t i = 0; i < g.num_nodes; ++i)
      if (g.modality_mask(i, m)) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    std::ofstream mout(dir / mask_file(g.modalities[m].name), std::ios::binary);
    mout.write(reinterpret_cast<const char*>(bits.data()),
               static_cast<std::streamsize>(bits.size()));
  }
}

MultimodalGraph load_bundle(const std::string& dir_path) {
  const fs::path dir(dir_path);
  json meta;
  {
    std::ifstream in = open_or_throw(dir / "meta.json", std::ios::in);
    try {
      in >> meta;
    } catch (const json::exception& e) {
      throw StructuralError("meta.json malformed: " + std::string(e.what()));
    }
  }
  if (meta.value("endianness", "little") != "little")
    throw StructuralError("bundle declares unsupported endianness");

  MultimodalGraph g;
  g.num_nodes = meta.at("num_nodes").get<std::size_t>();
  g.num_classes = meta.at("num_classes").get<int>();
  for (const auto& m : meta.at("modalities"))
    g.modalities.push_back({m.at("name").get<std::string>(), m.at("feature_dim").get<std::size_t>()});

  {
    std::ifstream in = open_or_throw(dir / "edges.tsv", std::ios::in);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream row(line);
      std::uint32_t u, v;
      if (!(row >> u >> v)) throw StructuralError("edges.tsv: malformed line \"" + line + "\"");
      g.edges.emplace_back(u, v);
    }
  }
  const std::size_t declared_edges = meta.at("num_edges").get<std::size_t>();
  if (g.edges.size() != declared_edges)
    throw DimensionMismatchError("edges.tsv holds " + std::to_string(g.edges.size()) +
                                 " edges, meta declares " + std::to_string(declared_edges));

  g.labels.assign(g.num_nodes, kUnlabeled);
  {
    std::ifstream in = open_or_throw(dir / "labels.tsv", std::ios::in);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream row(line);
      std::size_t id;
      int label;
      if (!(row >> id >> label)) throw StructuralError("labels.tsv: malformed line \"" + line + "\"");
      if (id >= g.num_nodes)
        throw StructuralError("labels.tsv: node id " + std::to_string(id) + " out of range");
      g.labels[id] = label;
    }
  }

  g.modality_mask = Mat<std::uint8_t>(g.num_nodes, g.modalities.size());
  for (std::size_t m = 0; m < g.modalities.size(); ++m) {
    const auto& desc = g.modalities[m];
    std::vector<char> payload = read_all(dir / feat_file(desc.name));
    check_payload_size(payload.size(), g.num_nodes * desc.feature_dim * sizeof(float),
                       g.num_nodes * sizeof(float), feat_file(desc.name));
    Mat<float> f(g.num_nodes, desc.feature_dim);
    std::copy(payload.begin(), payload.end(), reinterpret_cast<char*>(f.data().data()));
    g.features.push_back(std::move(f));

    std::vector<char> bits = read_all(dir / mask_file(desc.name));
    const std::size_t expected = (g.num_nodes + 7) / 8;
    if (bits.size() < expected)
      throw TruncatedPayloadError(mask_file(desc.name) + ": payload has " +
                                  std::to_string(bits.size()) + " bytes, expected " +
                                  std::to_string(expected));
    if (bits.size() > expected)
      throw DimensionMismatchError(mask_file(desc.name) + ": payload has " +
                                   std::to_string(bits.size()) + " bytes, expected " +
                                   std::to_string(expected));
    for (std::size_t i = 0; i < g.num_nodes; ++i)
      g.modality_mask(i, m) =
          static_cast<std::uint8_t>((static_cast<std::uint8_t>(bits[i / 8]) >> (i % 8)) & 1u);
  }

  validate_graph(g);
  return g;
}

}  // namespace mmfgl
