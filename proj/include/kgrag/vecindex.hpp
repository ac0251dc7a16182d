#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "kgrag/common.hpp"

namespace kgrag::vecindex {

struct EmbeddingVector {
    std::vector<float> values;
    std::string model_id;

    std::size_t dim() const noexcept { return values.size(); }
    bool operator==(const EmbeddingVector&) const = default;
};

/// Scales `values` to unit L2 norm. Throws Error for the zero vector.
EmbeddingVector normalized(std::vector<float> values, std::string model_id);

/// Cosine similarity, accumulated in double precision.
double cosine(const std::vector<float>& a, const std::vector<float>& b);

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::string model_id() const = 0;
    virtual std::size_t dim() const = 0;
    /// Throws Error for empty text or a degenerate (zero) embedding.
    virtual EmbeddingVector embed(std::string_view text) const = 0;
};

/// Offline embedder: lowercased text, space-padded code-point trigrams,
/// feature-hashed with a sign bit into `dim` buckets, L2-normalized.
class TrigramEmbedder final : public Embedder {
public:
    explicit TrigramEmbedder(std::size_t dim = 256) : dim_(dim) {}
    std::string model_id() const override { return "trigram-" + std::to_string(dim_); }
    std::size_t dim() const override { return dim_; }
    EmbeddingVector embed(std::string_view text) const override;

private:
    std::size_t dim_;
};

struct VectorRecord {
    std::string record_id;
    EmbeddingVector vector;
    StringMap payload;

    bool operator==(const VectorRecord&) const = default;
};

struct Hit {
    std::string record_id;
    double score = 0;
    StringMap payload;
};

struct VectorIndexMeta {
    std::string name;
    std::size_t dim = 0;
    std::string model_id;
    std::size_t record_count = 0;

    bool operator==(const VectorIndexMeta&) const = default;
};

using PayloadFilter = std::function<bool(const StringMap&)>;

/// Exact cosine top-k over an in-memory record set. Not internally
/// synchronized: concurrent top_k calls are fine, writes need exclusive access.
class VectorIndex {
public:
    VectorIndex(std::string name, std::size_t dim, std::string model_id);

    VectorIndexMeta meta() const;
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }

    /// Inserts or replaces by record_id; returns inserts + replacements.
    /// The batch is validated up front, so a bad record leaves the index untouched.
    std::size_t upsert(std::vector<VectorRecord> records);

    std::vector<Hit> top_k(const EmbeddingVector& query, std::size_t k, const PayloadFilter& filter = {}) const;

    const VectorRecord* find(const std::string& record_id) const;
    /// Records in record_id order.
    const std::map<std::string, VectorRecord>& records() const noexcept { return records_; }

    std::string serialize() const;
    static VectorIndex deserialize(std::string_view bytes);
    void persist(const std::string& path) const;
    static VectorIndex load(const std::string& path);

    bool operator==(const VectorIndex&) const = default;

private:
    std::string name_;
    std::size_t dim_;
    std::string model_id_;
    std::map<std::string, VectorRecord> records_;
};

struct ProjectedPoint {
    std::string record_id;
    double x = 0;
    double y = 0;
};

/// PCA onto the first two principal components of the centered vectors. Each
/// axis is oriented so its largest-magnitude loading is positive.
std::vector<ProjectedPoint> project_2d(const VectorIndex& index);

/// A directory of named indexes stored as `<name>.vidx`.
class VectorStore {
public:
    explicit VectorStore(std::string dir) : dir_(std::move(dir)) {}

    /// Loads every `*.vidx` file in the directory (missing directory = empty store).
    void load_all();
    void save(const std::string& name) const;
    void save_all() const;

    bool has(const std::string& name) const { return indexes_.count(name) > 0; }
    VectorIndex& get(const std::string& name);
    const VectorIndex& get(const std::string& name) const;
    /// Returns the named index, creating it empty when absent. Throws when an
    /// existing index disagrees on dim or model_id.
    VectorIndex& ensure(const std::string& name, std::size_t dim, const std::string& model_id);
    std::vector<std::string> names() const;
    std::string path_of(const std::string& name) const { return dir_ + "/" + name + ".vidx"; }

private:
    std::string dir_;
    std::map<std::string, VectorIndex> indexes_;
};

inline constexpr const char* kCorpusIndex = "corpus";
inline constexpr const char* kReferenceKbIndex = "reference_kb";

}  // namespace kgrag::vecindex
