// SPDX-License-Identifier: Apache-2.0
#include "patchflow/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "patchflow/textio.hpp"

namespace patchflow {

namespace {
constexpr const char* kMagic = "patchflow-tensors 1";

bool known_dtype(const std::string& d) { return d == "f32" || d == "f64" || d == "i64"; }

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out.empty() ? "1" : out;
}

Shape parse_shape(const std::string& text, const std::string& context) {
  Shape shape;
  std::string cur;
  for (char ch : text + "x") {
    if (ch == 'x') {
      require(!cur.empty(), ErrorKind::Format, "bad shape '" + text + "' in " + context);
      shape.push_back(std::stoi(cur));
      cur.clear();
    } else {
      require(ch >= '0' && ch <= '9', ErrorKind::Format,
              "bad shape '" + text + "' in " + context);
      cur.push_back(ch);
    }
  }
  return shape;
}
}  // namespace

void save_bundle(const std::string& path, const TensorBundle& bundle) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot open '" + path + "' for writing");
  out << kMagic << "\n";
  for (const auto& [k, v] : bundle.meta) out << "meta " << k << " " << v << "\n";
  std::size_t offset = 0;
  for (const auto& [name, t] : bundle.tensors) {
    out << "tensor " << name << " " << t.dtype << " " << shape_text(t.shape) << " " << offset
        << " " << t.bytes.size() << "\n";
    offset += t.bytes.size();
  }
  out << "data\n";
  for (const auto& [name, t] : bundle.tensors)
    out.write(reinterpret_cast<const char*>(t.bytes.data()),
              static_cast<std::streamsize>(t.bytes.size()));
  out.flush();
  require(out.good(), ErrorKind::Io, "write failed for '" + path + "'");
}

TensorBundle load_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open '" + path + "'");

  TensorBundle bundle;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::Format,
          "'" + path + "': empty file");
  require(line == kMagic, ErrorKind::Format,
          "'" + path + "': bad magic line (offset 0): '" + line + "'");

  struct Entry {
    std::string name;
    RawTensor tensor;
    std::size_t offset = 0;
    std::size_t nbytes = 0;
  };
  std::vector<Entry> entries;
  bool saw_data = false;
  while (std::getline(in, line)) {
    if (line == "data") {
      saw_data = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      bundle.meta.emplace_back(key, trim(value));
    } else if (kind == "tensor") {
      Entry e;
      std::string shape_s;
      ls >> e.name >> e.tensor.dtype >> shape_s >> e.offset >> e.nbytes;
      require(!ls.fail(), ErrorKind::Format, "'" + path + "': bad tensor line: '" + line + "'");
      require(known_dtype(e.tensor.dtype), ErrorKind::Format,
              "'" + path + "': unknown dtype '" + e.tensor.dtype + "'");
      e.tensor.shape = parse_shape(shape_s, path);
      entries.push_back(std::move(e));
    } else {
      fail(ErrorKind::Format, "'" + path + "': unexpected header line: '" + line + "'");
    }
  }
  require(saw_data, ErrorKind::Format, "'" + path + "': header not terminated by 'data'");

  std::vector<char> payload((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
  for (Entry& e : entries) {
    require(e.offset + e.nbytes <= payload.size(), ErrorKind::Format,
            "'" + path + "': truncated payload; tensor '" + e.name + "' wants bytes [" +
                std::to_string(e.offset) + "," + std::to_string(e.offset + e.nbytes) +
                ") of " + std::to_string(payload.size()));
    e.tensor.bytes.assign(payload.begin() + static_cast<std::ptrdiff_t>(e.offset),
                          payload.begin() + static_cast<std::ptrdiff_t>(e.offset + e.nbytes));
    bundle.tensors.emplace_back(e.name, std::move(e.tensor));
  }
  return bundle;
}

}  // namespace patchflow
