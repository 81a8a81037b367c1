#pragma once

// Semantic and visual event graphs and the merged cross-modal graph.

#include "met/corpus.hpp"
#include "met/tensor.hpp"

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace met {

enum class NodeKind { SentenceRoot, Event, ImageRoot, Object, Relation };

enum class EdgeRelation {
  SentNext,
  SentPrev,
  SentToEvent,
  EventToSent,
  ObjToRel,
  RelToObj,
  ImgToObj,
  ObjToImg,
  ImgToSent,
  SentToImg,
};

inline constexpr int kRelationCount = 10;

inline constexpr std::array<EdgeRelation, kRelationCount> kAllRelations = {
    EdgeRelation::SentNext,  EdgeRelation::SentPrev, EdgeRelation::SentToEvent, EdgeRelation::EventToSent,
    EdgeRelation::ObjToRel,  EdgeRelation::RelToObj, EdgeRelation::ImgToObj,    EdgeRelation::ObjToImg,
    EdgeRelation::ImgToSent, EdgeRelation::SentToImg,
};

const char* to_string(NodeKind k);
const char* to_string(EdgeRelation r);

// The paired reverse relation; triplet relations (ObjToRel, RelToObj) have none.
std::optional<EdgeRelation> reverse_relation(EdgeRelation r);

// Sentence roots and event nodes come from the text side.
inline bool is_semantic(NodeKind k) { return k == NodeKind::SentenceRoot || k == NodeKind::Event; }

struct GraphNode {
  int id = 0;
  NodeKind kind = NodeKind::Event;
  int feature_index = 0;
  int sentence = -1;  // owning sentence for semantic nodes
};

struct GraphEdge {
  int src = 0;
  int dst = 0;
  EdgeRelation relation = EdgeRelation::SentNext;
  auto operator<=>(const GraphEdge&) const = default;
};

struct EventGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;

  int node_count() const { return static_cast<int>(nodes.size()); }
  int count(NodeKind k) const;
  int count(EdgeRelation r) const;
  std::vector<int> ids_of(NodeKind k) const;

  // Checks endpoints, self-loops, and reverse pairing; throws ContractError.
  void validate() const;
};

struct FeaturedGraph {
  EventGraph graph;
  Tensor features;  // node_count x d, row = feature_index
};

// Structure only. sentence_lengths[i] is the token count of sentence i.
EventGraph semantic_structure(const std::vector<int>& sentence_lengths,
                              const std::vector<std::vector<SrlEvent>>& srl_events,
                              const std::string& story_id = "");

EventGraph visual_structure(const std::vector<SceneObject>& objects, const std::vector<SceneRelation>& relations);

// token_embeddings[i] is (length of sentence i) x d.
FeaturedGraph build_semantic_graph(const std::vector<std::vector<std::string>>& sentences,
                                   const std::vector<std::vector<SrlEvent>>& srl_events,
                                   const std::vector<Tensor>& token_embeddings, const std::string& story_id = "");

using ObjectEmbedder = std::function<Tensor(const SceneObject&)>;
using RelationEmbedder = std::function<Tensor(const std::string& predicate)>;

// The image root takes image_feature when given, else the mean of the object
// features (zeros for an image without objects; d is taken from image_dim).
FeaturedGraph build_visual_graph(const std::vector<SceneObject>& objects, const std::vector<SceneRelation>& relations,
                                 const ObjectEmbedder& object_embedder, const RelationEmbedder& relation_embedder,
                                 Index image_dim, const std::optional<Tensor>& image_feature = std::nullopt);

// Node-disjoint union; visual ids are shifted past the semantic ones. When
// bridge is set, the image root is linked both ways to every sentence root.
EventGraph merge_graphs(const EventGraph& semantic, const EventGraph& visual, bool bridge = true);
FeaturedGraph merge_graphs(const FeaturedGraph& semantic, const FeaturedGraph& visual, bool bridge = true);

}  // namespace met
