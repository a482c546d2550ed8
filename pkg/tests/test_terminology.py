"""Terminology: store, keyword/semantic search, and grounding decisions."""
import math
import random

import numpy as np
import pytest

from fhirforge.errors import (
    DimensionMismatchError,
    DuplicateEntryError,
    StoreParseError,
    ZeroVectorError,
)
from fhirforge.ir import Category, CodedConcept, CodeSystem
from fhirforge.terminology import (
    DEFAULT_DIM,
    DecisionKind,
    FailureMode,
    FallbackEmbedder,
    Grounder,
    GroundingThresholds,
    TerminologyEntry,
    TerminologyStore,
    VectorIndex,
    cosine,
    decision_region,
    fallback_embed,
    keyword_search,
    load_store,
    load_vectors,
    lookup,
    semantic_search,
)


def concept(system=CodeSystem.SNOMED, code="386661006", display="Fever", free_text=""):
    return CodedConcept(system=system, code=code, display=display, free_text=free_text)


class TestStore:
    def test_fixture_store_loads(self, tmp_path):
        lines = [
            '{"system": "SNOMED", "code": "386661006", "display": "Fever", "synonyms": []}',
            '{"system": "SNOMED", "code": "271759003", "display": "Bullous eruption", "synonyms": []}',
            '{"system": "LOINC", "code": "8310-5", "display": "Body temperature", "synonyms": []}',
        ]
        path = tmp_path / "s.jsonl"
        path.write_text("\n".join(lines) + "\n")
        store = load_store(path)
        assert store.size == 3

    def test_duplicate_key_rejected(self, tmp_path):
        line = '{"system": "SNOMED", "code": "386661006", "display": "Fever", "synonyms": []}'
        path = tmp_path / "s.jsonl"
        path.write_text(line + "\n" + line + "\n")
        with pytest.raises(DuplicateEntryError):
            load_store(path)

    def test_bad_line_reports_line_number(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text('{"system": "SNOMED", "code": "386661006", "display": "Fever"}\nnot json\n')
        with pytest.raises(StoreParseError) as err:
            load_store(path)
        assert err.value.line_no == 2

    def test_listing_style_entry_hits_lookup(self, fixture_store):
        entry = lookup(fixture_store, CodeSystem.SNOMED, "386661006")
        assert entry is not None and entry.display == "Fever"

    def test_lookup_absent_code(self, fixture_store):
        assert lookup(fixture_store, CodeSystem.LOINC, "0000-0") is None

    def test_lookup_prefilters_malformed_codes(self, fixture_store):
        assert lookup(fixture_store, CodeSystem.SNOMED, "abc") is None

    def test_lookup_display_from_fixture(self, fixture_store):
        entry = lookup(fixture_store, CodeSystem.SNOMED, "271759003")
        assert entry.display == "Bullous eruption"


class TestKeywordSearch:
    def test_single_token_exact_hit(self, fixture_store):
        hits = keyword_search(fixture_store, CodeSystem.SNOMED, "fever", k=5)
        assert hits[0][0].code == "386661006"
        assert hits[0][1] == 1.0

    def test_overlap_score_is_fraction_of_query_tokens(self, fixture_store):
        hits = keyword_search(fixture_store, CodeSystem.SNOMED, "bullous rash", k=5)
        by_code = {e.code: s for e, s in hits}
        # entry tokens {bullous, eruption, rash} share both query tokens via
        # the synonym; the skin-eruption entry shares only "rash"
        assert by_code["271759003"] == 1.0
        assert by_code["271807003"] == 0.5

    def test_no_shared_tokens_gives_empty(self, fixture_store):
        assert keyword_search(fixture_store, CodeSystem.SNOMED, "xyzzy", k=5) == []

    def test_half_overlap_against_two_token_entry(self):
        store = TerminologyStore([
            TerminologyEntry(CodeSystem.SNOMED, "271759003", "Bullous eruption")])
        hits = keyword_search(store, CodeSystem.SNOMED, "bullous rash", k=5)
        assert hits == [(store.get(CodeSystem.SNOMED, "271759003"), 0.5)]

    def test_ties_break_by_ascending_code(self):
        store = TerminologyStore([
            TerminologyEntry(CodeSystem.SNOMED, "222222006", "fever b"),
            TerminologyEntry(CodeSystem.SNOMED, "111111006", "fever a"),
        ])
        hits = keyword_search(store, CodeSystem.SNOMED, "fever", k=5)
        assert [e.code for e, _ in hits] == ["111111006", "222222006"]

    def test_k_limits_results(self, fixture_store):
        assert len(keyword_search(fixture_store, CodeSystem.SNOMED, "pain", k=1)) == 1


class TestCosine:
    def test_self_similarity_is_one(self):
        v = fallback_embed("fever")
        assert cosine(v, v) == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal_is_zero(self):
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_forty_five_degrees(self):
        assert cosine(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == pytest.approx(0.7071, abs=1e-4)

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVectorError):
            cosine(np.zeros(4), np.ones(4))

    def test_dim_mismatch_rejected(self):
        with pytest.raises(DimensionMismatchError):
            cosine(np.ones(4), np.ones(5))


class TestFallbackEmbed:
    def test_deterministic(self):
        a = fallback_embed("fever")
        b = fallback_embed("fever")
        assert np.array_equal(a, b)

    def test_unit_norm(self):
        for text in ("fever", "bullous eruption", "x"):
            assert abs(np.linalg.norm(fallback_embed(text)) - 1.0) < 1e-6

    def test_shared_words_score_higher_than_unrelated(self):
        fever = fallback_embed("fever")
        close = cosine(fever, fallback_embed("fever chills"))
        far = cosine(fever, fallback_embed("fracture"))
        assert close > far

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError):
            fallback_embed("")


def brute_force_top_k(index, system, query, k):
    """Independent oracle: score every vector, sort by (-cos, code)."""
    scored = []
    for code, vec in index.items_for(system):
        dot = math.fsum(float(a) * float(b) for a, b in zip(vec, query))
        scored.append((code, dot))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


class TestSemanticSearch:
    def test_stored_vector_is_its_own_best_match(self, fixture_store):
        index = VectorIndex.from_store(fixture_store)
        query = index.get(CodeSystem.SNOMED, "386661006")
        hits = semantic_search(index, CodeSystem.SNOMED, query, k=1)
        assert hits[0][1] == "386661006"
        assert hits[0][2] == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal_query_scores_zero_for_disjoint_entry(self):
        store = TerminologyStore([TerminologyEntry(CodeSystem.SNOMED, "111111006", "alpha")])
        index = VectorIndex(dim=4, encoder_id="unit-test")
        index.add(CodeSystem.SNOMED, "111111006", np.array([1.0, 0.0, 0.0, 0.0]))
        hits = semantic_search(index, CodeSystem.SNOMED, np.array([0.0, 1.0, 0.0, 0.0]), k=1)
        assert hits[0][2] == 0.0

    def test_top_two_of_five_matches_brute_force(self):
        rng = np.random.default_rng(42)
        index = VectorIndex(dim=16, encoder_id="unit-test")
        for i in range(5):
            v = rng.normal(size=16)
            index.add(CodeSystem.SNOMED, f"10000{i}006", v / np.linalg.norm(v))
        q = rng.normal(size=16)
        q = q / np.linalg.norm(q)
        got = [(code, pytest.approx(cos, abs=1e-9))
               for _s, code, cos in semantic_search(index, CodeSystem.SNOMED, q, k=2)]
        want = brute_force_top_k(index, CodeSystem.SNOMED, q, 2)
        assert [c for c, _ in got] == [c for c, _ in want]

    def test_matches_brute_force_oracle_on_large_random_store(self):
        rng = np.random.default_rng(7)
        index = VectorIndex(dim=32, encoder_id="unit-test")
        for i in range(1000):
            v = rng.normal(size=32)
            index.add(CodeSystem.LOINC, f"{i}-1", v / np.linalg.norm(v))
        for trial in range(5):
            q = rng.normal(size=32)
            q = q / np.linalg.norm(q)
            got = semantic_search(index, CodeSystem.LOINC, q, k=10)
            want = brute_force_top_k(index, CodeSystem.LOINC, q, 10)
            assert [code for _s, code, _c in got] == [code for code, _ in want]
            for (_s, _code, c_got), (_code2, c_want) in zip(got, want):
                assert c_got == pytest.approx(c_want, abs=1e-9)

    def test_dimension_mismatch(self, fixture_store):
        index = VectorIndex.from_store(fixture_store)
        with pytest.raises(DimensionMismatchError):
            semantic_search(index, CodeSystem.SNOMED, np.ones(index.dim + 1), k=1)


class TestVectorFile:
    def test_round_trip_through_vector_file(self, fixture_store, tmp_path):
        import json
        index = VectorIndex.from_store(fixture_store)
        path = tmp_path / "vecs.jsonl"
        with open(path, "w") as f:
            f.write(json.dumps({"format_version": 1, "dim": index.dim,
                                "encoder_id": index.encoder_id}) + "\n")
            for entry in fixture_store.entries():
                vec = index.get(entry.system, entry.code)
                f.write(json.dumps({"system": entry.system.value, "code": entry.code,
                                    "vector": [float(x) for x in vec]}) + "\n")
        loaded = load_vectors(path)
        assert loaded.dim == index.dim
        assert loaded.encoder_id == index.encoder_id
        for entry in fixture_store.entries():
            v = loaded.get(entry.system, entry.code)
            assert cosine(v, index.get(entry.system, entry.code)) == pytest.approx(1.0, abs=1e-6)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "vecs.jsonl"
        path.write_text('{"format_version": 99, "dim": 4, "encoder_id": "x"}\n')
        with pytest.raises(StoreParseError):
            load_vectors(path)

    def test_non_unit_vector_rejected(self, tmp_path):
        import json
        path = tmp_path / "vecs.jsonl"
        path.write_text(
            json.dumps({"format_version": 1, "dim": 2, "encoder_id": "x"}) + "\n"
            + json.dumps({"system": "SNOMED", "code": "111111006", "vector": [3.0, 4.0]}) + "\n")
        with pytest.raises(StoreParseError):
            load_vectors(path)


class TestThresholds:
    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            GroundingThresholds(t_accept=0.5, t_replace=0.75, t_reject=0.6)

    def test_from_string(self):
        t = GroundingThresholds.from_string("0.90,0.75,0.60")
        assert (t.t_accept, t.t_replace, t.t_reject) == (0.90, 0.75, 0.60)


class TestGroundCode:
    def test_exact_display_match_accepted(self, grounder):
        d = grounder.ground_code(concept(display="Fever"))
        assert d.kind == DecisionKind.ACCEPTED
        assert d.entry.code == "386661006"

    def test_synonym_match_accepted(self, grounder):
        d = grounder.ground_code(concept(code="271807003", display="rash"))
        assert d.kind == DecisionKind.ACCEPTED

    def test_high_cosine_on_own_code_accepted(self, grounder):
        d = grounder.ground_code(concept(code="271759003", display="eruption bullous"))
        assert d.kind == DecisionKind.ACCEPTED
        assert d.similarity >= 0.90

    def test_hallucinated_lab_code_rejected(self, grounder):
        d = grounder.ground_code(concept(system=CodeSystem.LOINC, code="9999-9",
                                         display="septic workup"))
        assert d.kind == DecisionKind.REJECTED
        assert d.failure_mode == FailureMode.HALLUCINATED_CODE
        assert d.best_similarity < 0.60

    def test_drug_class_description_rejected_as_non_specific(self, grounder):
        d = grounder.ground_code(concept(system=CodeSystem.RXNORM, code="723",
                                         display="oral antibiotics",
                                         free_text="oral antibiotics"))
        assert d.kind == DecisionKind.REJECTED
        assert d.failure_mode == FailureMode.NON_SPECIFIC_CLASS

    def test_vaccine_phrasing_gap_rejected_as_synonym_gap(self, grounder):
        d = grounder.ground_code(concept(system=CodeSystem.CVX, code="207",
                                         display="Moderna booster",
                                         free_text="Moderna booster"))
        assert d.kind == DecisionKind.REJECTED
        assert d.failure_mode == FailureMode.SYNONYM_GAP

    def test_close_candidate_replaces_unknown_code(self, grounder):
        d = grounder.ground_code(concept(code="755551009", display="bullous eruption of skin"))
        assert d.kind == DecisionKind.REPLACED
        assert d.similarity >= 0.75
        assert d.entry.code in ("271759003", "271807003")

    def test_middle_band_is_ambiguous(self, grounder):
        d = grounder.ground_code(concept(code="755551009", display="fevers"))
        assert d.kind == DecisionKind.REJECTED
        assert d.failure_mode == FailureMode.AMBIGUOUS
        assert 0.60 <= d.best_similarity < 0.75

    def test_procedure_code_on_finding_item_rejected_as_wrong_category(self, grounder):
        d = grounder.ground_code(concept(code="80146002", display="Appendectomy"),
                                 item_category=Category.FINDING)
        assert d.kind == DecisionKind.REJECTED
        assert d.failure_mode == FailureMode.WRONG_CATEGORY

    def test_overly_specific_description_rejected(self, grounder):
        d = grounder.ground_code(concept(
            code="392021009", display="loosening of lower teeth requiring dental implants"))
        assert d.kind == DecisionKind.REJECTED
        assert d.failure_mode == FailureMode.OVERLY_SPECIFIC

    def test_grounding_is_pure(self, grounder):
        c = concept(system=CodeSystem.RXNORM, code="723", display="oral antibiotics")
        assert grounder.ground_code(c) == grounder.ground_code(c)

    def test_rejections_carry_exactly_one_table_mode(self, grounder):
        rejected = [
            grounder.ground_code(concept(system=CodeSystem.LOINC, code="9999-9",
                                         display="septic workup")),
            grounder.ground_code(concept(system=CodeSystem.RXNORM, code="723",
                                         display="oral antibiotics")),
            grounder.ground_code(concept(system=CodeSystem.CVX, code="207",
                                         display="Moderna booster")),
        ]
        for d in rejected:
            assert d.failure_mode in set(FailureMode)


class TestDecisionMonotonicity:
    RANK = {"reject_floor": 0, "ambiguous": 1, "replace": 2}

    def test_region_ranks_never_decrease_in_cosine(self):
        rng = random.Random(99)
        for _ in range(1000):
            trio = sorted(rng.uniform(0, 1) for _ in range(3))
            thresholds = GroundingThresholds(
                t_accept=trio[2], t_replace=trio[1], t_reject=trio[0])
            a, b = sorted((rng.uniform(0, 1), rng.uniform(0, 1)))
            assert self.RANK[decision_region(a, thresholds)] <= \
                self.RANK[decision_region(b, thresholds)]

    def test_no_candidates_sits_at_the_floor(self):
        t = GroundingThresholds()
        assert decision_region(None, t) == "reject_floor"

    def test_band_edges(self):
        t = GroundingThresholds(t_accept=0.9, t_replace=0.75, t_reject=0.6)
        assert decision_region(0.5999, t) == "reject_floor"
        assert decision_region(0.60, t) == "ambiguous"
        assert decision_region(0.7499, t) == "ambiguous"
        assert decision_region(0.75, t) == "replace"

    def test_exact_match_acceptance_ignores_candidates(self, grounder):
        # tightening thresholds cannot shake an exact display match
        strict = Grounder(grounder.store, grounder.index,
                          GroundingThresholds(t_accept=1.0, t_replace=1.0, t_reject=1.0))
        d = strict.ground_code(concept(display="Fever"))
        assert d.kind == DecisionKind.ACCEPTED


class TestGroundScenario:
    def make_scenario(self, *codes, primary=None):
        from fhirforge.ir import (ClinicalScenario, Demographics, ExtractedItem,
                                  SourceQuote)
        items = []
        for i, (category, c) in enumerate(codes):
            items.append(ExtractedItem(
                category=category, description=c.display if c else f"item {i}",
                proposed_code=c, quote=SourceQuote(text=f"quote {i}")))
        return ClinicalScenario(
            demographics=Demographics(age_years=40, gender="female"),
            items=items, primary_diagnosis=primary, source_text="src")

    def test_two_acceptable_codes_no_demotions(self, grounder):
        s = self.make_scenario(
            (Category.SYMPTOM, concept(display="Fever")),
            (Category.SYMPTOM, concept(code="271759003", display="Bullous eruption")))
        grounded, decisions = grounder.ground_scenario(s)
        assert [d.kind for d in decisions] == [DecisionKind.ACCEPTED] * 2
        assert all(i.proposed_code is not None for i in grounded.items)
        assert grounded.conversion_failed is False

    def test_rejected_item_demoted_to_free_text(self, grounder):
        s = self.make_scenario(
            (Category.SYMPTOM, concept(display="Fever")),
            (Category.FINDING, concept(system=CodeSystem.LOINC, code="9999-9",
                                       display="septic workup")),
        )
        grounded, decisions = grounder.ground_scenario(s)
        assert [d.kind for d in decisions] == [DecisionKind.ACCEPTED, DecisionKind.REJECTED]
        assert grounded.items[1].proposed_code is None

    def test_rejected_primary_marks_conversion_failed(self, grounder):
        from fhirforge.ir import PrimaryDiagnosis
        primary = PrimaryDiagnosis(system=CodeSystem.SNOMED, code="999999009",
                                   display="idiopathic xanthofibroma")
        s = self.make_scenario((Category.SYMPTOM, concept(display="Fever")), primary=primary)
        grounded, decisions = grounder.ground_scenario(s)
        assert grounded.conversion_failed is True
        assert decisions[-1].is_primary is True
        assert decisions[-1].failure_mode == FailureMode.HALLUCINATED_CODE

    def test_cvx_free_text_gap_demotes_item(self, grounder):
        s = self.make_scenario(
            (Category.IMMUNIZATION,
             concept(system=CodeSystem.CVX, code="207", display="Moderna booster",
                     free_text="Moderna booster")))
        grounded, decisions = grounder.ground_scenario(s)
        assert decisions[0].failure_mode == FailureMode.SYNONYM_GAP
        assert grounded.items[0].proposed_code is None


class TestForeignEncoderIndex:
    def foreign_index(self, fixture_store):
        index = VectorIndex.from_store(fixture_store)
        foreign = VectorIndex(dim=index.dim, encoder_id="external-encoder-9000")
        for entry in fixture_store.entries():
            foreign.add(entry.system, entry.code, index.get(entry.system, entry.code))
        return foreign

    def test_exact_match_needs_no_embedder(self, fixture_store):
        grounder = Grounder(fixture_store, self.foreign_index(fixture_store))
        assert grounder.embedder is None
        decision = grounder.ground_code(concept(display="Fever"))
        assert decision.kind == DecisionKind.ACCEPTED

    def test_semantic_path_without_embedder_raises(self, fixture_store):
        from fhirforge.errors import EmbedderUnavailableError
        grounder = Grounder(fixture_store, self.foreign_index(fixture_store))
        with pytest.raises(EmbedderUnavailableError):
            grounder.ground_code(concept(display="febrile illness of unknown origin"))

    def test_explicit_fallback_embedder_restores_grounding(self, fixture_store):
        grounder = Grounder(fixture_store, self.foreign_index(fixture_store),
                            embedder=FallbackEmbedder(DEFAULT_DIM))
        decision = grounder.ground_code(concept(code="755551009",
                                                display="bullous eruption of skin"))
        assert decision.kind == DecisionKind.REPLACED
