#include "cnkit/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cnkit::corpus {

using nlohmann::json;

std::string Post::text() const { return body.empty() ? title : title + "\n" + body; }

std::string Sentence::id() const { return comment_id + "#" + std::to_string(index); }

KnowledgeRepository::KnowledgeRepository(std::vector<Post> posts, std::vector<Comment> comments)
    : posts_(std::move(posts)), comments_(std::move(comments)) {
  for (std::size_t i = 0; i < posts_.size(); ++i) {
    if (!post_index_.emplace(posts_[i].id, i).second) throw Error("duplicate post id: " + posts_[i].id);
    by_post_[posts_[i].id];
  }
  for (std::size_t i = 0; i < comments_.size(); ++i) {
    const auto& c = comments_[i];
    if (!comment_index_.emplace(c.id, i).second) throw Error("duplicate comment id: " + c.id);
    auto it = by_post_.find(c.post_id);
    if (it == by_post_.end()) throw Error("comment " + c.id + " references unknown post " + c.post_id);
    it->second.push_back(i);
    auto& slots = by_comment_[c.id];
    for (auto& s : split_sentences(c)) {
      slots.push_back(sentences_.size());
      sentences_.push_back(std::move(s));
    }
  }
}

const Post* KnowledgeRepository::find_post(std::string_view id) const {
  auto it = post_index_.find(std::string(id));
  return it == post_index_.end() ? nullptr : &posts_[it->second];
}

const Comment* KnowledgeRepository::find_comment(std::string_view id) const {
  auto it = comment_index_.find(std::string(id));
  return it == comment_index_.end() ? nullptr : &comments_[it->second];
}

const std::vector<std::size_t>& KnowledgeRepository::comments_of(std::string_view post_id) const {
  static const std::vector<std::size_t> kNone;
  auto it = by_post_.find(std::string(post_id));
  return it == by_post_.end() ? kNone : it->second;
}

const std::vector<std::size_t>& KnowledgeRepository::sentences_of(std::string_view comment_id) const {
  static const std::vector<std::size_t> kNone;
  auto it = by_comment_.find(std::string(comment_id));
  return it == by_comment_.end() ? kNone : it->second;
}

namespace {

[[noreturn]] void malformed(std::size_t line, const std::string& why) {
  throw IngestError("line " + std::to_string(line) + ": " + why, line);
}

template <typename T>
T field(const json& rec, const char* key, std::size_t line) {
  auto it = rec.find(key);
  if (it == rec.end()) malformed(line, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    malformed(line, std::string("field '") + key + "' has the wrong type");
  }
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

json post_to_json(const Post& p) {
  return {{"kind", "post"}, {"id", p.id},         {"title", p.title},
          {"body", p.body}, {"targets", p.target_tags}, {"score", p.score}};
}

json comment_to_json(const Comment& c) {
  return {{"kind", "comment"}, {"id", c.id},         {"post_id", c.post_id}, {"body", c.body},
          {"up", c.upvotes},   {"down", c.downvotes}, {"delta", c.delta_awarded}};
}

}  // namespace

IngestResult ingest(std::istream& records, const IngestOptions& options) {
  std::vector<Post> posts;
  std::vector<Comment> comments;
  std::set<std::string> post_ids;
  std::set<std::string> comment_ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(records, line)) {
    ++lineno;
    if (is_blank(line)) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      malformed(lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!rec.is_object()) malformed(lineno, "record is not an object");
    const auto kind = field<std::string>(rec, "kind", lineno);
    if (kind == "post") {
      Post p;
      p.id = field<std::string>(rec, "id", lineno);
      p.title = field<std::string>(rec, "title", lineno);
      p.body = rec.value("body", std::string());
      for (const auto& t : field<std::vector<std::string>>(rec, "targets", lineno)) p.target_tags.insert(t);
      p.score = field<long>(rec, "score", lineno);
      if (p.id.empty()) malformed(lineno, "empty post id");
      if (is_blank(p.title)) malformed(lineno, "post title is empty");
      if (!post_ids.insert(p.id).second) malformed(lineno, "duplicate post id '" + p.id + "'");
      posts.push_back(std::move(p));
    } else if (kind == "comment") {
      Comment c;
      c.id = field<std::string>(rec, "id", lineno);
      c.post_id = field<std::string>(rec, "post_id", lineno);
      c.body = field<std::string>(rec, "body", lineno);
      c.upvotes = field<long>(rec, "up", lineno);
      c.downvotes = field<long>(rec, "down", lineno);
      c.delta_awarded = rec.value("delta", false);
      if (c.id.empty()) malformed(lineno, "empty comment id");
      if (is_blank(c.body)) malformed(lineno, "comment body is empty");
      if (c.upvotes < 0 || c.downvotes < 0) malformed(lineno, "vote counts must be nonnegative");
      if (!comment_ids.insert(c.id).second) malformed(lineno, "duplicate comment id '" + c.id + "'");
      comments.push_back(std::move(c));
    } else {
      malformed(lineno, "unknown record kind '" + kind + "'");
    }
  }

  IngestResult result;
  std::vector<Comment> kept;
  for (auto& c : comments) {
    if (post_ids.count(c.post_id))
      kept.push_back(std::move(c));
    else
      result.dangling.push_back(c.id);
  }
  if (!result.dangling.empty() && !options.drop_dangling) {
    std::string msg = std::to_string(result.dangling.size()) + " comment(s) reference unknown posts:";
    for (const auto& id : result.dangling) msg += " " + id;
    throw IngestError(msg, 0, result.dangling);
  }
  result.repo = KnowledgeRepository(std::move(posts), std::move(kept));
  return result;
}

IngestResult ingest_file(const std::filesystem::path& path, const IngestOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus file " + path.string());
  return ingest(in, options);
}

KnowledgeRepository filter_comments(const KnowledgeRepository& repo) {
  std::vector<Comment> kept;
  for (const auto& c : repo.comments())
    if (c.upvotes >= c.downvotes) kept.push_back(c);
  return KnowledgeRepository(repo.posts(), std::move(kept));
}

std::vector<Post> query_posts_by_target(const KnowledgeRepository& repo, std::string_view target, std::size_t limit) {
  require(limit >= 1, "query limit must be at least 1");
  std::vector<const Post*> matches;
  for (const auto& p : repo.posts())
    if (p.target_tags.count(std::string(target))) matches.push_back(&p);
  std::sort(matches.begin(), matches.end(), [](const Post* a, const Post* b) {
    if (a->score != b->score) return a->score > b->score;
    return a->id < b->id;
  });
  std::vector<Post> out;
  for (std::size_t i = 0; i < matches.size() && i < limit; ++i) out.push_back(*matches[i]);
  return out;
}

namespace {

constexpr std::array<std::string_view, 24> kAbbreviations = {
    "dr", "mr", "mrs", "ms", "prof", "sr", "jr", "st", "vs", "e.g", "i.e", "u.s", "u.k", "inc", "ltd", "co",
    "no", "fig", "approx", "dept", "gen", "gov", "sen", "rep"};

bool is_abbreviation(std::string_view text, std::size_t dot) {
  std::size_t start = dot;
  while (start > 0) {
    const auto c = static_cast<unsigned char>(text[start - 1]);
    if (std::isalpha(c) || c == '.') --start;
    else break;
  }
  std::string word;
  for (std::size_t i = start; i < dot; ++i) word.push_back(static_cast<char>(std::tolower(text[i])));
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), word) != kAbbreviations.end();
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

}  // namespace

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    if (!is_terminator(text[i])) {
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < n && is_terminator(text[end])) ++end;
    while (end < n && (text[end] == '"' || text[end] == '\'' || text[end] == ')')) ++end;
    std::size_t next = end;
    while (next < n && std::isspace(static_cast<unsigned char>(text[next]))) ++next;
    const bool boundary = next > end && next < n && std::isupper(static_cast<unsigned char>(text[next])) &&
                          !(text[i] == '.' && end == i + 1 && is_abbreviation(text, i));
    if (boundary) {
      auto s = trim(text.substr(start, end - start));
      if (!s.empty()) out.push_back(std::move(s));
      start = next;
    }
    i = end;
  }
  auto tail = trim(text.substr(start));
  if (!tail.empty()) out.push_back(std::move(tail));
  return out;
}

std::vector<Sentence> split_sentences(const Comment& comment) {
  std::vector<Sentence> out;
  for (auto& s : split_sentences(comment.body)) out.push_back({comment.id, out.size(), std::move(s)});
  return out;
}

void save(const KnowledgeRepository& repo, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "posts.jsonl");
    for (const auto& p : repo.posts()) out << post_to_json(p).dump() << '\n';
  }
  {
    std::ofstream out(dir / "comments.jsonl");
    for (const auto& c : repo.comments()) out << comment_to_json(c).dump() << '\n';
  }
  {
    std::ofstream out(dir / "sentences.jsonl");
    for (const auto& s : repo.sentences())
      out << json{{"id", s.id()}, {"comment_id", s.comment_id}, {"index", s.index}, {"text", s.text}}.dump() << '\n';
  }
  std::ofstream manifest(dir / "manifest.json");
  manifest << json{{"format", "cnkit-repository"},
                   {"version", 1},
                   {"posts", repo.posts().size()},
                   {"comments", repo.comments().size()},
                   {"sentences", repo.sentences().size()}}
                  .dump(2)
           << '\n';
  if (!manifest) throw Error("failed writing repository to " + dir.string());
}

KnowledgeRepository load(const std::filesystem::path& dir) {
  std::ifstream manifest_in(dir / "manifest.json");
  if (!manifest_in) throw Error("no repository manifest in " + dir.string());
  const auto manifest = json::parse(manifest_in);
  if (manifest.value("format", "") != "cnkit-repository") throw Error("not a repository: " + dir.string());

  std::stringstream records;
  for (const char* name : {"posts.jsonl", "comments.jsonl"}) {
    std::ifstream in(dir / name);
    if (!in) throw Error("missing " + std::string(name) + " in " + dir.string());
    records << in.rdbuf() << '\n';
  }
  auto repo = ingest(records).repo;
  if (repo.posts().size() != manifest.at("posts").get<std::size_t>() ||
      repo.comments().size() != manifest.at("comments").get<std::size_t>())
    throw Error("repository files disagree with manifest in " + dir.string());
  return repo;
}

std::vector<HateSpeechSample> read_hate_speech(std::istream& in) {
  std::vector<HateSpeechSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (is_blank(line)) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      malformed(lineno, std::string("invalid JSON: ") + e.what());
    }
    HateSpeechSample hs{field<std::string>(rec, "id", lineno), field<std::string>(rec, "text", lineno),
                        field<std::string>(rec, "target", lineno)};
    if (is_blank(hs.text)) malformed(lineno, "hate speech text is empty");
    out.push_back(std::move(hs));
  }
  return out;
}

std::vector<HateSpeechSample> read_hate_speech_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open hate speech file " + path.string());
  return read_hate_speech(in);
}

}  // namespace cnkit::corpus
