#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "ccmt/error.hpp"
#include "ccmt/models.hpp"

namespace ccmt {
namespace {

constexpr char kMagic[8] = {'C', 'C', 'M', 'T', 'B', 'N', 'D', 'L'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(const std::string& path, std::vector<unsigned char> buf)
      : path_(path), buf_(std::move(buf)) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{buf_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > buf_.size()) {
      throw FormatError(path_, std::string("truncated bundle while reading ") + what +
                                   " at byte " + std::to_string(pos_));
    }
  }

  std::string path_;
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
};

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string fmt_double(double d) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, end);
}

std::string header_text(const ModelBundle& b) {
  const auto& a = b.arch();
  const auto& m = b.metadata();
  std::ostringstream os;
  os << "arch.K=" << a.nodes << "\n"
     << "arch.N=" << a.tasks << "\n"
     << "arch.m=" << join(a.channel_uses) << "\n"
     << "arch.variant=" << to_string(a.variant) << "\n"
     << "arch.ccmt=" << join({a.ccmt.begin(), a.ccmt.end()}) << "\n"
     << "arch.stc=" << join({a.stc.begin(), a.stc.end()}) << "\n"
     << "meta.seed=" << m.seed << "\n"
     << "meta.scenario=" << m.scenario << "\n"
     << "meta.snr_lo_db=" << fmt_double(m.snr_lo_db) << "\n"
     << "meta.snr_hi_db=" << fmt_double(m.snr_hi_db) << "\n"
     << "meta.epochs=" << m.epochs << "\n"
     << "meta.rotation=" << (m.rotation ? 1 : 0) << "\n";
  return os.str();
}

std::vector<std::size_t> parse_list(const std::string& path, const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const std::string item = s.substr(start, comma == std::string::npos ? std::string::npos
                                                                        : comma - start);
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || p != item.data() + item.size()) {
      throw FormatError(path, "bad integer list '" + s + "' in bundle header");
    }
    out.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class N>
N parse_num(const std::string& path, const std::string& s) {
  N v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw FormatError(path, "bad number '" + s + "' in bundle header");
  }
  return v;
}

Filters parse_filters(const std::string& path, const std::string& s) {
  auto v = parse_list(path, s);
  if (v.size() != 3) throw FormatError(path, "filter triple needs 3 entries: '" + s + "'");
  return {v[0], v[1], v[2]};
}

}  // namespace

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kBundleVersion);
  const std::string header = header_text(bundle);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  put_u32(out, static_cast<std::uint32_t>(bundle.params().size()));
  for (const auto& p : bundle.params()) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : p.value.values()) put_f32(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path.string(), "cannot open bundle for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError(path.string(), "write failed");
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(p, "cannot open bundle");
  Reader r(p, {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()});

  if (r.bytes(sizeof kMagic, "magic") != std::string(kMagic, sizeof kMagic)) {
    throw FormatError(p, "not a model bundle (bad magic)");
  }
  const auto version = r.u32("version");
  if (version != kBundleVersion) {
    throw FormatError(p, "bundle version " + std::to_string(version) + " unsupported (expected " +
                             std::to_string(kBundleVersion) + ")");
  }
  const std::string header = r.bytes(r.u32("header length"), "header");
  std::map<std::string, std::string> kv;
  std::istringstream hs(header);
  for (std::string line; std::getline(hs, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(p, "malformed header line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(p, "bundle header lacks '" + key + "'");
    return it->second;
  };

  ArchConfig arch;
  arch.nodes = parse_num<std::size_t>(p, get("arch.K"));
  arch.tasks = parse_num<std::size_t>(p, get("arch.N"));
  arch.channel_uses = parse_list(p, get("arch.m"));
  try {
    arch.variant = parse_variant(get("arch.variant"));
    arch.ccmt = parse_filters(p, get("arch.ccmt"));
    arch.stc = parse_filters(p, get("arch.stc"));
    arch.validate();
  } catch (const ValidationError& e) {
    throw FormatError(p, std::string("invalid arch in header: ") + e.what());
  }
  BundleMetadata meta;
  meta.seed = parse_num<std::uint64_t>(p, get("meta.seed"));
  meta.scenario = get("meta.scenario");
  meta.snr_lo_db = parse_num<double>(p, get("meta.snr_lo_db"));
  meta.snr_hi_db = parse_num<double>(p, get("meta.snr_hi_db"));
  meta.epochs = parse_num<std::size_t>(p, get("meta.epochs"));
  meta.rotation = get("meta.rotation") == "1";

  const auto layout = parameter_layout(arch);
  const auto count = r.u32("record count");
  if (count != layout.size()) {
    throw FormatError(p, "shape disagreement: " + std::to_string(count) + " records but " +
                             arch.describe() + " has " + std::to_string(layout.size()) +
                             " tensors");
  }
  std::vector<NamedTensor> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.u32("name length"), "name");
    Shape shape(r.u32("rank"));
    for (auto& d : shape) d = r.u32("dimension");
    if (name != layout[i].name || shape != layout[i].shape) {
      throw FormatError(p, "shape disagreement: record '" + name + "' " + shape_string(shape) +
                               " vs expected '" + layout[i].name + "' " +
                               shape_string(layout[i].shape) + " for " + arch.describe());
    }
    std::vector<float> values(shape_size(shape));
    for (auto& v : values) v = r.f32("tensor values");
    params.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  if (!r.at_end()) throw FormatError(p, "trailing bytes after last record");
  return ModelBundle(arch, std::move(params), meta);
}

ModelBundle load_bundle(const std::filesystem::path& path, const ArchConfig& expected) {
  auto b = load_bundle(path);
  if (!(b.arch() == expected)) {
    throw FormatError(path.string(), "shape disagreement: bundle holds " + b.arch().describe() +
                                         ", expected " + expected.describe());
  }
  return b;
}

}  // namespace ccmt
