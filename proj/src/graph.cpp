#include "stablegnn/graph.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace stablegnn {

namespace {

[[noreturn]] void parse_fail(const std::string& path, int line_no, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(field);
  return out;
}

bool parse_int(const std::string& s, int& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  auto [p, ec] = std::from_chars(b, e, out);
  if (ec != std::errc()) return false;
  while (p < e && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
  return p == e;
}

bool parse_double(const std::string& s, double& out) {
  try {
    size_t pos = 0;
    out = std::stod(s, &pos);
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\r' || s[pos] == '\t')) ++pos;
    return pos == s.size();
  } catch (...) {
    return false;
  }
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

const std::vector<std::string>& Graph::attribute(const std::string& name) const {
  auto it = attributes.find(name);
  if (it == attributes.end()) throw std::invalid_argument("unknown attribute: " + name);
  return it->second;
}

Graph make_graph(int num_nodes, const std::vector<std::pair<int, int>>& edges, Tensor features,
                 std::vector<int> labels,
                 std::map<std::string, std::vector<std::string>> attributes) {
  if (features.rank() != 2 || features.shape()[0] != num_nodes) {
    throw std::invalid_argument("make_graph: feature rows " + features.shape_str() +
                                " do not match num_nodes " + std::to_string(num_nodes));
  }
  if (static_cast<int>(labels.size()) != num_nodes) {
    throw std::invalid_argument("make_graph: label count does not match num_nodes");
  }
  for (const auto& [name, col] : attributes) {
    if (static_cast<int>(col.size()) != num_nodes) {
      throw std::invalid_argument("make_graph: attribute column '" + name + "' has wrong length");
    }
  }

  std::set<std::pair<int, int>> undirected;
  for (auto [a, b] : edges) {
    if (a < 0 || a >= num_nodes || b < 0 || b >= num_nodes) {
      throw std::invalid_argument("make_graph: edge (" + std::to_string(a) + "," +
                                  std::to_string(b) + ") references a node outside [0," +
                                  std::to_string(num_nodes) + ")");
    }
    undirected.emplace(std::min(a, b), std::max(a, b));
  }

  std::vector<std::vector<int>> adj(num_nodes);
  for (auto [a, b] : undirected) {
    adj[a].push_back(b);
    if (a != b) adj[b].push_back(a);
  }

  Graph g;
  g.num_nodes = num_nodes;
  g.features = std::move(features);
  g.labels = std::move(labels);
  g.attributes = std::move(attributes);
  g.csr_offsets.assign(num_nodes + 1, 0);
  for (int i = 0; i < num_nodes; ++i) {
    std::sort(adj[i].begin(), adj[i].end());
    g.csr_offsets[i + 1] = g.csr_offsets[i] + static_cast<int>(adj[i].size());
  }
  g.csr_neighbors.reserve(g.csr_offsets[num_nodes]);
  for (int i = 0; i < num_nodes; ++i) {
    g.csr_neighbors.insert(g.csr_neighbors.end(), adj[i].begin(), adj[i].end());
  }

  int max_label = -1;
  for (int y : g.labels) {
    if (y < 0) throw std::invalid_argument("make_graph: negative label");
    max_label = std::max(max_label, y);
  }
  g.num_classes = max_label + 1;
  return g;
}

Graph load_graph(const std::string& edges_path, const std::string& features_path,
                 const std::string& labels_path, const std::string& attrs_path) {
  // Features first; row count defines the node count.
  std::vector<std::vector<double>> rows;
  {
    auto in = open_or_throw(features_path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      line = strip_cr(line);
      if (line.empty()) continue;
      std::vector<double> row;
      for (const auto& f : split_fields(line, ',')) {
        double v;
        if (!parse_double(f, v)) parse_fail(features_path, line_no, "non-numeric feature '" + f + "'");
        row.push_back(v);
      }
      if (!rows.empty() && row.size() != rows.front().size()) {
        parse_fail(features_path, line_no, "inconsistent feature width");
      }
      rows.push_back(std::move(row));
    }
  }
  int n = static_cast<int>(rows.size());
  int f = n > 0 ? static_cast<int>(rows.front().size()) : 0;
  Tensor features = Tensor::zeros({n, f});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < f; ++j) features.at(i, j) = rows[i][j];
  }

  std::vector<int> labels(n, -1);
  {
    auto in = open_or_throw(labels_path);
    std::string line;
    int line_no = 0;
    int count = 0;
    while (std::getline(in, line)) {
      ++line_no;
      line = strip_cr(line);
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      int id, y;
      if (!(ss >> id >> y)) parse_fail(labels_path, line_no, "expected 'node_id<TAB>label'");
      if (id < 0 || id >= n) {
        parse_fail(labels_path, line_no,
                   "node id " + std::to_string(id) + " outside feature row count " + std::to_string(n));
      }
      if (labels[id] != -1) parse_fail(labels_path, line_no, "duplicate label for node " + std::to_string(id));
      labels[id] = y;
      ++count;
    }
    if (count != n) {
      throw std::runtime_error(labels_path + ": label count " + std::to_string(count) +
                               " does not match feature row count " + std::to_string(n));
    }
  }

  std::vector<std::pair<int, int>> edges;
  {
    auto in = open_or_throw(edges_path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      line = strip_cr(line);
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      int a, b;
      if (!(ss >> a >> b)) parse_fail(edges_path, line_no, "expected 'src<TAB>dst'");
      if (a < 0 || a >= n || b < 0 || b >= n) {
        parse_fail(edges_path, line_no, "edge references node outside [0," + std::to_string(n) + ")");
      }
      edges.emplace_back(a, b);
    }
  }

  std::map<std::string, std::vector<std::string>> attributes;
  if (!attrs_path.empty()) {
    auto in = open_or_throw(attrs_path);
    std::string line;
    int line_no = 0;
    if (!std::getline(in, line)) throw std::runtime_error(attrs_path + ": empty attribute file");
    ++line_no;
    auto header = split_fields(strip_cr(line), ',');
    if (header.empty() || header[0] != "node_id") {
      parse_fail(attrs_path, line_no, "header must start with 'node_id'");
    }
    for (size_t c = 1; c < header.size(); ++c) attributes[header[c]].assign(n, "");
    int count = 0;
    while (std::getline(in, line)) {
      ++line_no;
      line = strip_cr(line);
      if (line.empty()) continue;
      auto fields = split_fields(line, ',');
      if (fields.size() != header.size()) parse_fail(attrs_path, line_no, "wrong field count");
      int id;
      if (!parse_int(fields[0], id)) parse_fail(attrs_path, line_no, "bad node id '" + fields[0] + "'");
      if (id < 0 || id >= n) parse_fail(attrs_path, line_no, "node id out of range");
      for (size_t c = 1; c < header.size(); ++c) attributes[header[c]][id] = fields[c];
      ++count;
    }
    if (count != n) {
      throw std::runtime_error(attrs_path + ": attribute row count " + std::to_string(count) +
                               " does not match node count " + std::to_string(n));
    }
  }

  return make_graph(n, edges, std::move(features), std::move(labels), std::move(attributes));
}

void save_graph(const Graph& g, const std::string& edges_path, const std::string& features_path,
                const std::string& labels_path, const std::string& attrs_path) {
  {
    std::ofstream out(edges_path);
    if (!out) throw std::runtime_error("cannot write " + edges_path);
    for (int i = 0; i < g.num_nodes; ++i) {
      for (int k = g.csr_offsets[i]; k < g.csr_offsets[i + 1]; ++k) {
        int j = g.csr_neighbors[k];
        if (j >= i) out << i << "\t" << j << "\n";  // each undirected edge once
      }
    }
  }
  {
    std::ofstream out(features_path);
    if (!out) throw std::runtime_error("cannot write " + features_path);
    out.precision(17);
    for (int i = 0; i < g.num_nodes; ++i) {
      for (int j = 0; j < g.feature_dim(); ++j) {
        if (j) out << ",";
        out << g.features.at(i, j);
      }
      out << "\n";
    }
  }
  {
    std::ofstream out(labels_path);
    if (!out) throw std::runtime_error("cannot write " + labels_path);
    for (int i = 0; i < g.num_nodes; ++i) out << i << "\t" << g.labels[i] << "\n";
  }
  if (!attrs_path.empty() && !g.attributes.empty()) {
    std::ofstream out(attrs_path);
    if (!out) throw std::runtime_error("cannot write " + attrs_path);
    out << "node_id";
    for (const auto& [name, _] : g.attributes) out << "," << name;
    out << "\n";
    for (int i = 0; i < g.num_nodes; ++i) {
      out << i;
      for (const auto& [_, col] : g.attributes) out << "," << col[i];
      out << "\n";
    }
  }
}

void BipartiteGraph::finalize() {
  std::set<int> tags;
  for (const auto& it : interactions) tags.insert(it.env);
  env_tags.assign(tags.begin(), tags.end());

  user_offsets.assign(num_users + 1, 0);
  item_offsets.assign(num_items + 1, 0);
  for (const auto& it : interactions) {
    ++user_offsets[it.user + 1];
    ++item_offsets[it.item + 1];
  }
  for (int u = 0; u < num_users; ++u) user_offsets[u + 1] += user_offsets[u];
  for (int i = 0; i < num_items; ++i) item_offsets[i + 1] += item_offsets[i];
  user_items.assign(interactions.size(), 0);
  item_users.assign(interactions.size(), 0);
  std::vector<int> ucur(user_offsets.begin(), user_offsets.end() - 1);
  std::vector<int> icur(item_offsets.begin(), item_offsets.end() - 1);
  for (const auto& it : interactions) {
    user_items[ucur[it.user]++] = it.item;
    item_users[icur[it.item]++] = it.user;
  }
}

std::vector<BipartiteGraph::Interaction> BipartiteGraph::interactions_in_env(int env_tag) const {
  std::vector<Interaction> out;
  for (const auto& it : interactions) {
    if (it.env == env_tag) out.push_back(it);
  }
  return out;
}

const std::vector<std::string>& BipartiteGraph::attribute(const std::string& name) const {
  auto it = user_attributes.find(name);
  if (it == user_attributes.end()) throw std::invalid_argument("unknown attribute: " + name);
  return it->second;
}

BipartiteGraph load_interactions(const std::string& path) {
  auto in = open_or_throw(path);
  std::string line;
  int line_no = 0;
  std::vector<std::array<int, 3>> raw;
  std::set<int> users, items;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    int u, i, e;
    if (!(ss >> u >> i >> e)) parse_fail(path, line_no, "expected 'user<TAB>item<TAB>env_tag'");
    if (u < 0 || i < 0) parse_fail(path, line_no, "negative id");
    raw.push_back({u, i, e});
    users.insert(u);
    items.insert(i);
  }
  // Densify ids in sorted order of the raw ids.
  std::map<int, int> umap, imap;
  int next = 0;
  for (int u : users) umap[u] = next++;
  next = 0;
  for (int i : items) imap[i] = next++;

  BipartiteGraph b;
  b.num_users = static_cast<int>(users.size());
  b.num_items = static_cast<int>(items.size());
  b.interactions.reserve(raw.size());
  for (const auto& r : raw) {
    b.interactions.push_back({umap[r[0]], imap[r[1]], r[2]});
  }
  b.finalize();
  return b;
}

void save_interactions(const BipartiteGraph& b, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& it : b.interactions) {
    out << it.user << "\t" << it.item << "\t" << it.env << "\n";
  }
}

BipartiteAdj build_bipartite_adj(const BipartiteGraph& b, int env_tag) {
  std::set<std::pair<int, int>> unique_edges;
  for (const auto& it : b.interactions) {
    if (it.env == env_tag) unique_edges.emplace(it.user, it.item);
  }
  BipartiteAdj adj;
  adj.num_users = b.num_users;
  adj.num_items = b.num_items;
  adj.edges.assign(unique_edges.begin(), unique_edges.end());
  adj.user_degree.assign(b.num_users, 0);
  adj.item_degree.assign(b.num_items, 0);
  for (auto [u, i] : adj.edges) {
    ++adj.user_degree[u];
    ++adj.item_degree[i];
  }
  for (int u = 0; u < adj.num_users; ++u) {
    if (adj.user_degree[u] == 0) {
      throw std::runtime_error("user " + std::to_string(u) + " has no interactions in env " +
                               std::to_string(env_tag));
    }
  }
  for (int i = 0; i < adj.num_items; ++i) {
    if (adj.item_degree[i] == 0) {
      throw std::runtime_error("item " + std::to_string(i) + " has no interactions in env " +
                               std::to_string(env_tag));
    }
  }
  adj.user_offsets.assign(adj.num_users + 1, 0);
  adj.item_offsets.assign(adj.num_items + 1, 0);
  for (auto [u, i] : adj.edges) {
    ++adj.user_offsets[u + 1];
    ++adj.item_offsets[i + 1];
  }
  for (int u = 0; u < adj.num_users; ++u) adj.user_offsets[u + 1] += adj.user_offsets[u];
  for (int i = 0; i < adj.num_items; ++i) adj.item_offsets[i + 1] += adj.item_offsets[i];
  adj.user_edge_ids.assign(adj.edges.size(), 0);
  adj.item_edge_ids.assign(adj.edges.size(), 0);
  std::vector<int> ucur(adj.user_offsets.begin(), adj.user_offsets.end() - 1);
  std::vector<int> icur(adj.item_offsets.begin(), adj.item_offsets.end() - 1);
  for (size_t e = 0; e < adj.edges.size(); ++e) {
    adj.user_edge_ids[ucur[adj.edges[e].first]++] = static_cast<int>(e);
    adj.item_edge_ids[icur[adj.edges[e].second]++] = static_cast<int>(e);
  }
  return adj;
}

}  // namespace stablegnn
