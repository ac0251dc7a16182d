#include "kgrag/vecindex.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <Eigen/Dense>

namespace kgrag::vecindex {

namespace {

constexpr std::string_view kMagicFamily = "vecidx ";
constexpr std::string_view kMagic = "vecidx v1\n";

double norm_of(const std::vector<float>& v) {
    double s = 0;
    for (float x : v) s += double(x) * double(x);
    return std::sqrt(s);
}

bool hit_before(const Hit& a, const Hit& b) {
    return a.score != b.score ? a.score > b.score : a.record_id < b.record_id;
}

}  // namespace

EmbeddingVector normalized(std::vector<float> values, std::string model_id) {
    double n = norm_of(values);
    if (n == 0 || !std::isfinite(n)) throw Error("degenerate embedding (zero vector)");
    for (auto& x : values) x = static_cast<float>(x / n);
    return {std::move(values), std::move(model_id)};
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) throw Error("cosine of vectors with different dims");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * double(b[i]);
        na += double(a[i]) * double(a[i]);
        nb += double(b[i]) * double(b[i]);
    }
    if (na == 0 || nb == 0) return 0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

EmbeddingVector TrigramEmbedder::embed(std::string_view text) const {
    if (trim(text).empty()) throw Error("cannot embed empty text");
    auto lower = unicode_lower(text);
    std::vector<std::string_view> cps{" "};
    for (auto cp : utf8_code_points(lower)) {
        bool space = cp.size() == 1 && std::isspace(static_cast<unsigned char>(cp[0]));
        if (space) {
            if (cps.back() != " ") cps.push_back(" ");
        } else {
            cps.push_back(cp);
        }
    }
    if (cps.back() != " ") cps.push_back(" ");

    std::vector<float> v(dim_, 0.0f);
    std::string gram;
    for (std::size_t i = 0; i + 3 <= cps.size(); ++i) {
        gram.assign(cps[i]).append(cps[i + 1]).append(cps[i + 2]);
        auto h = fnv1a64(gram);
        v[h % dim_] += (h >> 63) ? -1.0f : 1.0f;
    }
    return normalized(std::move(v), model_id());
}

VectorIndex::VectorIndex(std::string name, std::size_t dim, std::string model_id)
    : name_(std::move(name)), dim_(dim), model_id_(std::move(model_id)) {
    if (dim_ == 0) throw Error("index dim must be positive");
}

VectorIndexMeta VectorIndex::meta() const { return {name_, dim_, model_id_, records_.size()}; }

std::size_t VectorIndex::upsert(std::vector<VectorRecord> records) {
    for (const auto& r : records) {
        if (r.record_id.empty()) throw Error("record_id must be non-empty");
        if (r.vector.dim() != dim_) {
            throw Error("dim mismatch for record '" + r.record_id + "': index " + std::to_string(dim_) + ", got " +
                        std::to_string(r.vector.dim()));
        }
        if (r.vector.model_id != model_id_) {
            throw Error("model_id mismatch for record '" + r.record_id + "': index " + model_id_ + ", got " +
                        r.vector.model_id);
        }
        if (std::abs(norm_of(r.vector.values) - 1.0) > 1e-5) {
            throw Error("vector for record '" + r.record_id + "' is not unit-norm");
        }
    }
    for (auto& r : records) {
        auto id = r.record_id;
        records_.insert_or_assign(std::move(id), std::move(r));
    }
    return records.size();
}

std::vector<Hit> VectorIndex::top_k(const EmbeddingVector& query, std::size_t k, const PayloadFilter& filter) const {
    if (k == 0) throw Error("k must be at least 1");
    if (query.dim() != dim_) {
        throw Error("query dim " + std::to_string(query.dim()) + " does not match index dim " + std::to_string(dim_));
    }
    std::vector<Hit> hits;
    hits.reserve(records_.size());
    for (const auto& [id, rec] : records_) {
        if (filter && !filter(rec.payload)) continue;
        hits.push_back({id, cosine(query.values, rec.vector.values), {}});
    }
    auto n = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(), hit_before);
    hits.resize(n);
    for (auto& h : hits) h.payload = records_.at(h.record_id).payload;
    return hits;
}

const VectorRecord* VectorIndex::find(const std::string& record_id) const {
    auto it = records_.find(record_id);
    return it == records_.end() ? nullptr : &it->second;
}

std::string VectorIndex::serialize() const {
    BinaryWriter w;
    w.raw(kMagic);
    w.str(name_);
    w.u32(static_cast<std::uint32_t>(dim_));
    w.str(model_id_);
    w.u64(records_.size());
    for (const auto& [id, rec] : records_) {
        w.str(id);
        w.u32(static_cast<std::uint32_t>(rec.payload.size()));
        for (const auto& [k, v] : rec.payload) {
            w.str(k);
            w.str(v);
        }
        for (float x : rec.vector.values) w.f32(x);
    }
    return w.finish_with_crc();
}

VectorIndex VectorIndex::deserialize(std::string_view bytes) {
    return parse_snapshot(bytes, kMagicFamily, kMagic, [](BinaryReader& r) {
        auto name = r.str();
        auto dim = r.u32();
        auto model = r.str();
        if (dim == 0) throw IntegrityError("index dim must be positive");
        VectorIndex index(name, dim, model);
        auto count = r.u64();
        for (std::uint64_t i = 0; i < count; ++i) {
            VectorRecord rec;
            rec.record_id = r.str();
            auto pairs = r.u32();
            for (std::uint32_t p = 0; p < pairs; ++p) {
                auto k = r.str();
                rec.payload[k] = r.str();
            }
            rec.vector.model_id = model;
            rec.vector.values.resize(dim);
            for (auto& x : rec.vector.values) x = r.f32();
            auto id = rec.record_id;
            index.records_.insert_or_assign(std::move(id), std::move(rec));
        }
        return index;
    });
}

void VectorIndex::persist(const std::string& path) const { write_file_atomic(path, serialize()); }

VectorIndex VectorIndex::load(const std::string& path) { return deserialize(read_file(path)); }

std::vector<ProjectedPoint> project_2d(const VectorIndex& index) {
    const auto n = index.size();
    if (n < 3) throw Error("projection needs at least 3 records, index has " + std::to_string(n));
    const auto d = index.meta().dim;

    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    Eigen::Index row = 0;
    for (const auto& [id, rec] : index.records()) {
        for (std::size_t j = 0; j < d; ++j) x(row, static_cast<Eigen::Index>(j)) = rec.vector.values[j];
        ++row;
    }
    x.rowwise() -= x.colwise().mean();

    Eigen::MatrixXd axes = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), 2);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(x.transpose() * x);
    // Eigenvalues come back ascending; the last two columns are the principal axes.
    for (int a = 0; a < 2 && a < static_cast<int>(d); ++a) {
        Eigen::VectorXd axis = solver.eigenvectors().col(static_cast<Eigen::Index>(d) - 1 - a);
        Eigen::Index arg = 0;
        for (Eigen::Index j = 1; j < axis.size(); ++j) {
            if (std::abs(axis(j)) > std::abs(axis(arg)) + 1e-12) arg = j;
        }
        if (axis(arg) < 0) axis = -axis;
        axes.col(a) = axis;
    }
    Eigen::MatrixXd proj = x * axes;

    std::vector<ProjectedPoint> out;
    out.reserve(n);
    row = 0;
    for (const auto& [id, rec] : index.records()) {
        out.push_back({id, proj(row, 0), proj(row, 1)});
        ++row;
    }
    return out;
}

void VectorStore::load_all() {
    namespace fs = std::filesystem;
    indexes_.clear();
    if (!fs::exists(dir_)) return;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir_)) {
        if (e.is_regular_file() && e.path().extension() == ".vidx") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        auto index = VectorIndex::load(f.string());
        indexes_.insert_or_assign(f.stem().string(), std::move(index));
    }
}

void VectorStore::save(const std::string& name) const {
    std::filesystem::create_directories(dir_);
    get(name).persist(path_of(name));
}

void VectorStore::save_all() const {
    for (const auto& [name, index] : indexes_) save(name);
}

VectorIndex& VectorStore::get(const std::string& name) {
    auto it = indexes_.find(name);
    if (it == indexes_.end()) throw Error("no vector index named '" + name + "'");
    return it->second;
}

const VectorIndex& VectorStore::get(const std::string& name) const {
    auto it = indexes_.find(name);
    if (it == indexes_.end()) throw Error("no vector index named '" + name + "'");
    return it->second;
}

VectorIndex& VectorStore::ensure(const std::string& name, std::size_t dim, const std::string& model_id) {
    auto it = indexes_.find(name);
    if (it == indexes_.end()) it = indexes_.emplace(name, VectorIndex(name, dim, model_id)).first;
    auto m = it->second.meta();
    if (m.dim != dim || m.model_id != model_id) {
        throw Error("index '" + name + "' holds " + m.model_id + "/" + std::to_string(m.dim) + " vectors, expected " +
                    model_id + "/" + std::to_string(dim));
    }
    return it->second;
}

std::vector<std::string> VectorStore::names() const {
    std::vector<std::string> out;
    for (const auto& [name, index] : indexes_) out.push_back(name);
    return out;
}

}  // namespace kgrag::vecindex
