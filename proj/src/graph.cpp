#include "met/graph.hpp"

#include "met/ops.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace met {

const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::SentenceRoot: return "SentenceRoot";
    case NodeKind::Event: return "Event";
    case NodeKind::ImageRoot: return "ImageRoot";
    case NodeKind::Object: return "Object";
    case NodeKind::Relation: return "Relation";
  }
  return "?";
}

const char* to_string(EdgeRelation r) {
  switch (r) {
    case EdgeRelation::SentNext: return "SentNext";
    case EdgeRelation::SentPrev: return "SentPrev";
    case EdgeRelation::SentToEvent: return "SentToEvent";
    case EdgeRelation::EventToSent: return "EventToSent";
    case EdgeRelation::ObjToRel: return "ObjToRel";
    case EdgeRelation::RelToObj: return "RelToObj";
    case EdgeRelation::ImgToObj: return "ImgToObj";
    case EdgeRelation::ObjToImg: return "ObjToImg";
    case EdgeRelation::ImgToSent: return "ImgToSent";
    case EdgeRelation::SentToImg: return "SentToImg";
  }
  return "?";
}

std::optional<EdgeRelation> reverse_relation(EdgeRelation r) {
  switch (r) {
    case EdgeRelation::SentNext: return EdgeRelation::SentPrev;
    case EdgeRelation::SentPrev: return EdgeRelation::SentNext;
    case EdgeRelation::SentToEvent: return EdgeRelation::EventToSent;
    case EdgeRelation::EventToSent: return EdgeRelation::SentToEvent;
    case EdgeRelation::ImgToObj: return EdgeRelation::ObjToImg;
    case EdgeRelation::ObjToImg: return EdgeRelation::ImgToObj;
    case EdgeRelation::ImgToSent: return EdgeRelation::SentToImg;
    case EdgeRelation::SentToImg: return EdgeRelation::ImgToSent;
    case EdgeRelation::ObjToRel:
    case EdgeRelation::RelToObj: return std::nullopt;
  }
  return std::nullopt;
}

int EventGraph::count(NodeKind k) const {
  return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [k](const GraphNode& n) { return n.kind == k; }));
}

int EventGraph::count(EdgeRelation r) const {
  return static_cast<int>(
      std::count_if(edges.begin(), edges.end(), [r](const GraphEdge& e) { return e.relation == r; }));
}

std::vector<int> EventGraph::ids_of(NodeKind k) const {
  std::vector<int> out;
  for (const auto& n : nodes) {
    if (n.kind == k) out.push_back(n.id);
  }
  return out;
}

void EventGraph::validate() const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id != static_cast<int>(i)) {
      throw ContractError("graph node " + std::to_string(i) + " carries id " + std::to_string(nodes[i].id));
    }
  }
  std::multiset<GraphEdge> all(edges.begin(), edges.end());
  for (const auto& e : edges) {
    if (e.src < 0 || e.src >= node_count() || e.dst < 0 || e.dst >= node_count()) {
      throw ContractError("edge " + std::to_string(e.src) + "->" + std::to_string(e.dst) + " references a missing node");
    }
    if (e.src == e.dst) throw ContractError("self-loop edge on node " + std::to_string(e.src));
    if (auto rev = reverse_relation(e.relation)) {
      if (!all.count(GraphEdge{e.dst, e.src, *rev})) {
        throw ContractError(std::string("edge ") + to_string(e.relation) + " " + std::to_string(e.src) + "->" +
                            std::to_string(e.dst) + " lacks its " + to_string(*rev) + " reverse");
      }
    }
  }
}

EventGraph semantic_structure(const std::vector<int>& sentence_lengths,
                              const std::vector<std::vector<SrlEvent>>& srl_events, const std::string& story_id) {
  if (srl_events.size() != sentence_lengths.size()) {
    throw AnnotationError("story " + story_id + ": " + std::to_string(srl_events.size()) + " SRL entries for " +
                          std::to_string(sentence_lengths.size()) + " sentences");
  }
  EventGraph g;
  std::vector<int> roots;
  for (std::size_t i = 0; i < sentence_lengths.size(); ++i) {
    const int root = g.node_count();
    roots.push_back(root);
    g.nodes.push_back({root, NodeKind::SentenceRoot, root, static_cast<int>(i)});
    for (const auto& event : srl_events[i]) {
      for (const auto& span : event) {
        if (span.start < 0 || span.start >= span.end || span.end > sentence_lengths[i]) {
          throw AnnotationError("story " + story_id + ", sentence " + std::to_string(i) + ": span [" +
                                std::to_string(span.start) + ", " + std::to_string(span.end) +
                                ") outside sentence of length " + std::to_string(sentence_lengths[i]));
        }
        const int id = g.node_count();
        g.nodes.push_back({id, NodeKind::Event, id, static_cast<int>(i)});
        g.edges.push_back({root, id, EdgeRelation::SentToEvent});
        g.edges.push_back({id, root, EdgeRelation::EventToSent});
      }
    }
  }
  for (std::size_t i = 0; i + 1 < roots.size(); ++i) {
    g.edges.push_back({roots[i], roots[i + 1], EdgeRelation::SentNext});
    g.edges.push_back({roots[i + 1], roots[i], EdgeRelation::SentPrev});
  }
  return g;
}

EventGraph visual_structure(const std::vector<SceneObject>& objects, const std::vector<SceneRelation>& relations) {
  EventGraph g;
  g.nodes.push_back({0, NodeKind::ImageRoot, 0, -1});
  std::map<int, int> node_of;
  for (const auto& o : objects) {
    const int id = g.node_count();
    if (!node_of.emplace(o.id, id).second) {
      throw AnnotationError("duplicate scene object id " + std::to_string(o.id));
    }
    g.nodes.push_back({id, NodeKind::Object, id, -1});
    g.edges.push_back({0, id, EdgeRelation::ImgToObj});
    g.edges.push_back({id, 0, EdgeRelation::ObjToImg});
  }
  for (const auto& t : relations) {
    auto s = node_of.find(t.subject);
    auto o = node_of.find(t.object);
    if (s == node_of.end() || o == node_of.end()) {
      throw AnnotationError("relation (" + std::to_string(t.subject) + ", " + t.predicate + ", " +
                            std::to_string(t.object) + ") references a missing object id");
    }
    const int id = g.node_count();
    g.nodes.push_back({id, NodeKind::Relation, id, -1});
    g.edges.push_back({s->second, id, EdgeRelation::ObjToRel});
    g.edges.push_back({id, o->second, EdgeRelation::RelToObj});
  }
  return g;
}

FeaturedGraph build_semantic_graph(const std::vector<std::vector<std::string>>& sentences,
                                   const std::vector<std::vector<SrlEvent>>& srl_events,
                                   const std::vector<Tensor>& token_embeddings, const std::string& story_id) {
  if (token_embeddings.size() != sentences.size()) {
    throw DimensionError("build_semantic_graph: " + std::to_string(token_embeddings.size()) +
                         " embedding tables for " + std::to_string(sentences.size()) + " sentences");
  }
  std::vector<int> lengths;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    lengths.push_back(static_cast<int>(sentences[i].size()));
    if (token_embeddings[i].rows() != lengths.back()) {
      throw DimensionError("build_semantic_graph: sentence " + std::to_string(i) + " has " +
                           std::to_string(lengths.back()) + " tokens but " + shape_string(token_embeddings[i].value()) +
                           " embeddings");
    }
  }
  FeaturedGraph out;
  out.graph = semantic_structure(lengths, srl_events, story_id);
  std::vector<Tensor> rows;
  rows.reserve(out.graph.nodes.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto n = static_cast<std::size_t>(lengths[i]);
    rows.push_back(mean_pool(token_embeddings[i], std::vector<bool>(n, true)));
    for (const auto& event : srl_events[i]) {
      for (const auto& span : event) {
        std::vector<bool> mask(n, false);
        for (int t = span.start; t < span.end; ++t) mask[static_cast<std::size_t>(t)] = true;
        rows.push_back(mean_pool(token_embeddings[i], mask));
      }
    }
  }
  out.features = vstack(rows);
  return out;
}

FeaturedGraph build_visual_graph(const std::vector<SceneObject>& objects, const std::vector<SceneRelation>& relations,
                                 const ObjectEmbedder& object_embedder, const RelationEmbedder& relation_embedder,
                                 Index image_dim, const std::optional<Tensor>& image_feature) {
  FeaturedGraph out;
  out.graph = visual_structure(objects, relations);
  std::vector<Tensor> object_rows;
  for (const auto& o : objects) object_rows.push_back(object_embedder(o));
  std::vector<Tensor> rows;
  if (image_feature) {
    rows.push_back(*image_feature);
  } else if (object_rows.empty()) {
    rows.push_back(Tensor::zeros(1, image_dim));
  } else {
    const Tensor stacked = vstack(object_rows);
    rows.push_back(mean_pool(stacked, std::vector<bool>(object_rows.size(), true)));
  }
  for (auto& r : object_rows) rows.push_back(r);
  for (const auto& t : relations) rows.push_back(relation_embedder(t.predicate));
  out.features = vstack(rows);
  return out;
}

EventGraph merge_graphs(const EventGraph& semantic, const EventGraph& visual, bool bridge) {
  if (semantic.count(NodeKind::ImageRoot) != 0 || visual.count(NodeKind::SentenceRoot) != 0) {
    throw ContractError("merge_graphs: expects a semantic graph and a visual graph");
  }
  EventGraph g = semantic;
  const int offset = semantic.node_count();
  for (auto n : visual.nodes) {
    n.id += offset;
    n.feature_index += offset;
    g.nodes.push_back(n);
  }
  for (auto e : visual.edges) {
    e.src += offset;
    e.dst += offset;
    g.edges.push_back(e);
  }
  std::set<int> ids;
  for (const auto& n : g.nodes) {
    if (!ids.insert(n.id).second) throw ContractError("merge_graphs: duplicate node id " + std::to_string(n.id));
  }
  if (bridge) {
    const auto images = visual.ids_of(NodeKind::ImageRoot);
    if (images.size() != 1) throw ContractError("merge_graphs: visual graph must have exactly one image root");
    const int image = images.front() + offset;
    for (int root : semantic.ids_of(NodeKind::SentenceRoot)) {
      g.edges.push_back({image, root, EdgeRelation::ImgToSent});
      g.edges.push_back({root, image, EdgeRelation::SentToImg});
    }
  }
  return g;
}

FeaturedGraph merge_graphs(const FeaturedGraph& semantic, const FeaturedGraph& visual, bool bridge) {
  FeaturedGraph out;
  out.graph = merge_graphs(semantic.graph, visual.graph, bridge);
  out.features = vstack({semantic.features, visual.features});
  return out;
}

}  // namespace met
