#include "mpkd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mpkd {

namespace {

constexpr char kMagic[] = "MPKD1";
constexpr std::size_t kMagicLen = 5;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw Error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

void put_block(std::string& out, std::size_t rows, std::size_t cols, std::span<const double> values) {
  put_u32(out, static_cast<std::uint32_t>(rows));
  put_u32(out, static_cast<std::uint32_t>(cols));
  for (double x : values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
}

DenseMatrix get_block(const std::string& in, std::size_t& pos, const char* name) {
  const auto rows = get_u32(in, pos);
  const auto cols = get_u32(in, pos);
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  if (pos + 4 * n > in.size()) throw Error(std::string("checkpoint: truncated block ") + name);
  DenseMatrix m(rows, cols);
  for (auto& x : m.values()) x = static_cast<double>(std::bit_cast<float>(get_u32(in, pos)));
  return m;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

std::filesystem::path sidecar(const std::filesystem::path& path) { return path.string() + ".json"; }

}  // namespace

std::string checkpoint_bytes(const Checkpoint& c) {
  std::string out(kMagic, kMagicLen);
  const auto& s = c.student;
  put_block(out, s.entity_emb.rows(), s.entity_emb.cols(), s.entity_emb.values());
  put_block(out, s.relation_emb.rows(), s.relation_emb.cols(), s.relation_emb.values());
  put_block(out, s.transform.rows(), s.transform.cols(), s.transform.values());
  put_block(out, s.attn.rows(), s.attn.cols(), s.attn.values());
  put_block(out, 1, s.time_freq.size(), s.time_freq);
  for (const DenseMatrix* m : {&c.align.temporal_WQ, &c.align.temporal_WK, &c.align.temporal_WV, &c.align.cross_WQ,
                               &c.align.cross_WK})
    put_block(out, m->rows(), m->cols(), m->values());
  return out;
}

std::string checkpoint_meta_json(const CheckpointMeta& meta) {
  nlohmann::ordered_json j;
  j["format"] = "MPKD1";
  j["dim"] = meta.dim;
  j["neighbors"] = meta.neighbors;
  j["layers"] = meta.layers;
  j["entity_count"] = meta.entities.size();
  j["relation_count"] = meta.relations.size();
  j["entities"] = meta.entities;
  j["relations"] = meta.relations;
  j["config_digest"] = meta.config_digest;
  j["seed"] = meta.seed;
  j["payload_digest"] = meta.payload_digest;
  return j.dump(2) + "\n";
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = checkpoint_bytes(ckpt);
  CheckpointMeta meta = ckpt.meta;
  meta.dim = ckpt.student.dim();
  meta.payload_digest = hex64(fnv1a64(bytes));
  write_file(path, bytes);
  write_file(sidecar(path), checkpoint_meta_json(meta));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kMagic) != 0)
    throw Error("checkpoint " + path.string() + ": bad magic (not an MPKD1 file)");
  Checkpoint c;
  std::size_t pos = kMagicLen;
  c.student.entity_emb = get_block(bytes, pos, "entity_emb");
  c.student.relation_emb = get_block(bytes, pos, "relation_emb");
  c.student.transform = get_block(bytes, pos, "transform");
  c.student.attn = get_block(bytes, pos, "attn");
  const auto freq = get_block(bytes, pos, "time_freq");
  c.student.time_freq.assign(freq.values().begin(), freq.values().end());
  c.align.temporal_WQ = get_block(bytes, pos, "temporal_WQ");
  c.align.temporal_WK = get_block(bytes, pos, "temporal_WK");
  c.align.temporal_WV = get_block(bytes, pos, "temporal_WV");
  c.align.cross_WQ = get_block(bytes, pos, "cross_WQ");
  c.align.cross_WK = get_block(bytes, pos, "cross_WK");
  if (pos != bytes.size()) throw Error("checkpoint: trailing bytes");
  const std::size_t d = c.student.transform.rows();
  if (c.student.transform.cols() != d || c.student.entity_emb.cols() != d || c.student.relation_emb.cols() != d ||
      c.student.attn.cols() != 4 * d || c.student.time_freq.size() != d || c.align.dim() != d)
    throw Error("checkpoint: inconsistent block shapes");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(sidecar(path)));
    c.meta.dim = j.at("dim").get<std::size_t>();
    c.meta.neighbors = j.at("neighbors").get<std::size_t>();
    c.meta.layers = j.at("layers").get<std::size_t>();
    c.meta.entities = j.at("entities").get<std::vector<std::string>>();
    c.meta.relations = j.at("relations").get<std::vector<std::string>>();
    c.meta.config_digest = j.at("config_digest").get<std::string>();
    c.meta.seed = j.at("seed").get<std::uint64_t>();
    c.meta.payload_digest = j.at("payload_digest").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint metadata " + sidecar(path).string() + ": " + e.what());
  }
  if (c.meta.payload_digest != hex64(fnv1a64(bytes))) throw Error("checkpoint: payload digest mismatch");
  if (c.meta.dim != d) throw Error("checkpoint: metadata dimension does not match the payload");
  if (c.meta.entities.size() != c.student.entity_emb.rows() ||
      2 * c.meta.relations.size() != c.student.relation_emb.rows())
    throw Error("checkpoint: metadata vocabulary sizes do not match the payload");
  c.student.dropout_rate = 0.0;
  return c;
}

}  // namespace mpkd
