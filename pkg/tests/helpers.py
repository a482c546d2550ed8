"""Shared fixture machinery: scripted provider responses, deterministic
case corpus, and transcript building."""
from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field

from fhirforge.corpus import CaseRecord, Split
from fhirforge.gateway import Gateway, LlmRequest, Stage, Transcript, fingerprint
from fhirforge.synthesis import REPAIR_DELIMITER

NS = uuid.UUID("7b7e8f10-60d5-4b4e-8f2e-b7a4c9d0e1f2")

REFERENCE_DATE = "2026-04-30"
ONSET_DATE = "2026-04-28"

SNOMED_URI = "http://snomed.info/sct"
LOINC_URI = "http://loinc.org"
RXNORM_URI = "http://www.nlm.nih.gov/research/umls/rxnorm"
CVX_URI = "http://hl7.org/fhir/sid/cvx"
ASSERTION_URL = "https://fhirforge.dev/fhir/StructureDefinition/assertion-source"


def rid(tag: str) -> str:
    return str(uuid.uuid5(NS, tag))


def make_transcript(path, pairs: list[tuple[LlmRequest, str]]) -> Transcript:
    """Author a replay transcript from (request, response) pairs."""
    with open(path, "w", encoding="utf-8") as f:
        for request, response in pairs:
            f.write(json.dumps({
                "fingerprint": fingerprint(request),
                "stage": request.stage.value,
                "response_text": response,
            }, ensure_ascii=False) + "\n")
    return Transcript(path)


@dataclass
class FixtureCase:
    record: CaseRecord
    scenario_response: str
    synthesis_responses: list[str]
    scan_response: str
    diagnosis_name: str
    diagnosis_synonyms: list[str]
    diagnosis_code: str
    age: int
    should_succeed: bool = True


class ScriptedGateway(Gateway):
    """Record-mode gateway whose provider is a scripted response table."""

    def __init__(self, cases: list[FixtureCase], transcript: Transcript):
        super().__init__(mode="record", transcript=transcript)
        self.cases = cases
        self.provider_calls = 0

    def _call_provider(self, request: LlmRequest) -> str:
        self.provider_calls += 1
        if request.stage == Stage.EXTRACTION:
            for case in self.cases:
                if case.record.prompt_text in request.user_prompt:
                    return case.scenario_response
        elif request.stage == Stage.SYNTHESIS:
            for case in self.cases:
                if f'"age_years": {case.age}' in request.user_prompt:
                    index = 1 if REPAIR_DELIMITER in request.user_prompt else 0
                    return case.synthesis_responses[min(index, len(case.synthesis_responses) - 1)]
        elif request.stage == Stage.SEMANTIC_SCAN:
            for case in self.cases:
                if f"Suppressed diagnosis: {case.diagnosis_name}\n" in request.user_prompt:
                    return case.scan_response
        raise AssertionError(f"no scripted response for {request.stage.value} request")


class QueueGateway(Gateway):
    """Record-mode gateway that serves scripted responses per stage, in order.

    Cache hits (repeated fingerprints) never consume from the queue, so a
    replay of the recorded transcript reproduces the run exactly.
    """

    def __init__(self, transcript: Transcript, responses: dict[Stage, list[str]]):
        super().__init__(mode="record", transcript=transcript)
        self._queues = {stage: list(items) for stage, items in responses.items()}
        self.provider_calls = 0

    def _call_provider(self, request: LlmRequest) -> str:
        self.provider_calls += 1
        queue = self._queues.get(request.stage)
        if not queue:
            raise AssertionError(f"no scripted responses left for {request.stage.value}")
        return queue.pop(0) if len(queue) > 1 else queue[0]


def _condition(entry_id: str, patient_id: str, coding: dict | None, text: str,
               assertion: str = "clinician-concluded", note: str | None = None) -> dict:
    code: dict = {"text": text}
    if coding is not None:
        code["coding"] = [coding]
    resource = {
        "resourceType": "Condition",
        "id": entry_id,
        "clinicalStatus": {
            "coding": [{"system": "http://terminology.hl7.org/CodeSystem/condition-clinical",
                        "code": "active", "display": "Active"}],
            "text": "Active",
        },
        "verificationStatus": {
            "coding": [{"system": "http://terminology.hl7.org/CodeSystem/condition-ver-status",
                        "code": "confirmed", "display": "Confirmed"}],
        },
        "code": code,
        "subject": {"reference": f"Patient/{patient_id}"},
        "onsetDateTime": ONSET_DATE,
        "recordedDate": REFERENCE_DATE,
        "extension": [{"url": ASSERTION_URL, "valueCode": assertion}],
    }
    if note:
        resource["note"] = [{"text": note}]
    return resource


def _entry(resource: dict) -> dict:
    return {"fullUrl": f"urn:uuid:{resource['id']}", "resource": resource}


@dataclass
class _CaseSpec:
    num: int
    gender: str
    symptom_phrase: str
    symptom_coding: dict | None
    symptom_display: str
    diagnosis_display: str
    diagnosis_code: str
    diagnosis_synonyms: list[str]
    extras: list[str] = field(default_factory=list)


_CASE_SPECS = [
    _CaseSpec(0, "female", "a blistering rash on both forearms",
              {"system": SNOMED_URI, "code": "271759003", "display": "Bullous eruption"},
              "Bullous eruption", "Bullous pemphigoid", "77090002", ["BP", "pemphigoid"],
              ["note_leak"]),
    _CaseSpec(1, "male", "a productive cough and fever",
              {"system": SNOMED_URI, "code": "49727002", "display": "Cough"},
              "Cough", "Community acquired pneumonia", "385093006", ["CAP"],
              ["medication:amoxicillin:723", "diagnostic_report"]),
    _CaseSpec(2, "female", "increased thirst and frequent urination",
              None, "increased thirst",
              "Type 2 diabetes mellitus", "44054006",
              ["T2DM", "adult-onset diabetes", "type two diabetes"], []),
    _CaseSpec(3, "female", "burning with urination",
              {"system": SNOMED_URI, "code": "386661006", "display": "Fever"},
              "Fever", "Urinary tract infection", "68566005", ["UTI"],
              ["medication:ibuprofen:5640", "allergy"]),
    _CaseSpec(4, "male", "burning chest discomfort after meals",
              {"system": SNOMED_URI, "code": "29857009", "display": "Chest pain"},
              "Chest pain", "Gastroesophageal reflux disease", "235595009",
              ["GERD", "acid reflux"], ["history_asthma", "immunization"]),
    _CaseSpec(5, "female", "a throbbing unilateral headache",
              {"system": SNOMED_URI, "code": "25064002", "display": "Headache"},
              "Headache", "Migraine", "37796009", ["migraine headache"],
              ["medication:aspirin:1191"]),
    _CaseSpec(6, "male", "right lower quadrant abdominal pain",
              {"system": SNOMED_URI, "code": "271863007", "display": "Abdominal tenderness"},
              "Abdominal tenderness", "Acute appendicitis", "85189001", ["appendicitis"],
              ["procedure"]),
    _CaseSpec(7, "female", "persistent fatigue and pallor",
              None, "fatigue",
              "Iron deficiency anemia", "87522002", ["IDA"],
              ["lab_hemoglobin", "family_history"]),
    _CaseSpec(8, "male", "wheezing and shortness of breath",
              {"system": SNOMED_URI, "code": "267036007", "display": "shortness of breath"},
              "shortness of breath", "Asthma", "195967001", [],
              ["repair_needed"]),
    _CaseSpec(9, "female", "intermittent palpitations",
              None, "palpitations",
              "idiopathic xanthofibroma", "999999009", [], ["grounding_failure"]),
]


def _source_text(spec: _CaseSpec, age: int) -> str:
    parts = [f"A {age}-year-old {spec.gender} presented with {spec.symptom_phrase}."]
    if spec.num % 2 == 0:
        parts.append("Temperature was 37.8 degrees.")
    else:
        parts.append("Heart rate was 88 beats per minute.")
    for extra in spec.extras:
        if extra.startswith("medication:"):
            drug = extra.split(":")[1]
            parts.append(f"The patient was started on {drug}.")
        elif extra == "allergy":
            parts.append("She reported an allergy to penicillin.")
        elif extra == "history_asthma":
            parts.append("He reported a known history of asthma.")
        elif extra == "immunization":
            parts.append("He had received a flu shot last fall.")
        elif extra == "procedure":
            parts.append("He underwent an appendectomy.")
        elif extra == "family_history":
            parts.append("Her mother had iron deficiency anemia.")
        elif extra == "lab_hemoglobin":
            parts.append("Laboratory testing showed hemoglobin of 9.8 g/dL.")
        elif extra == "note_leak":
            parts.append("Examination revealed tense fluid-filled blisters.")
    parts.append(f"Final diagnosis: {spec.diagnosis_display}.")
    return " ".join(parts)


def _scenario_response(spec: _CaseSpec, age: int) -> str:
    items = [{
        "category": "Symptom",
        "description": spec.symptom_display,
        "quote": {"text": spec.symptom_phrase},
        "assertion_source": "clinician_concluded",
    }]
    if spec.symptom_coding is not None:
        system = {SNOMED_URI: "SNOMED"}[spec.symptom_coding["system"]]
        items[0]["proposed_code"] = {
            "system": system,
            "code": spec.symptom_coding["code"],
            "display": spec.symptom_coding["display"],
            "free_text": spec.symptom_display,
        }
    if spec.num % 2 == 0:
        items.append({
            "category": "Vital",
            "description": "body temperature",
            "quote": {"text": "Temperature was 37.8 degrees"},
            "proposed_code": {"system": "LOINC", "code": "8310-5",
                              "display": "Body temperature", "free_text": "temperature"},
            "value": {"value": 37.8, "unit": "Cel"},
        })
    else:
        items.append({
            "category": "Vital",
            "description": "heart rate",
            "quote": {"text": "Heart rate was 88 beats per minute"},
            "proposed_code": {"system": "LOINC", "code": "8867-4",
                              "display": "Heart rate", "free_text": "heart rate"},
            "value": {"value": 88, "unit": "bpm"},
        })
    for extra in spec.extras:
        if extra.startswith("medication:"):
            _, drug, rxcui = extra.split(":")
            items.append({
                "category": "Medication",
                "description": drug,
                "quote": {"text": f"started on {drug}"},
                "proposed_code": {"system": "RXNORM", "code": rxcui,
                                  "display": drug, "free_text": drug},
            })
        elif extra == "allergy":
            items.append({
                "category": "Allergy",
                "description": "penicillin allergy",
                "quote": {"text": "allergy to penicillin"},
                "assertion_source": "patient_stated",
            })
        elif extra == "history_asthma":
            items.append({
                "category": "History",
                "description": "asthma",
                "quote": {"text": "known history of asthma"},
                "proposed_code": {"system": "SNOMED", "code": "195967001",
                                  "display": "Asthma", "free_text": "asthma"},
                "assertion_source": "patient_stated",
            })
        elif extra == "immunization":
            items.append({
                "category": "Immunization",
                "description": "influenza vaccination",
                "quote": {"text": "received a flu shot"},
                "proposed_code": {"system": "CVX", "code": "141",
                                  "display": "flu shot", "free_text": "flu shot"},
            })
        elif extra == "procedure":
            items.append({
                "category": "Procedure",
                "description": "appendectomy",
                "quote": {"text": "underwent an appendectomy"},
                "proposed_code": {"system": "SNOMED", "code": "80146002",
                                  "display": "Appendectomy", "free_text": "appendectomy"},
            })
        elif extra == "family_history":
            items.append({
                "category": "FamilyHistory",
                "description": "mother with iron deficiency anemia",
                "quote": {"text": "mother had iron deficiency anemia"},
            })
        elif extra == "lab_hemoglobin":
            items.append({
                "category": "Lab",
                "description": "hemoglobin",
                "quote": {"text": "hemoglobin of 9.8 g/dL"},
                "proposed_code": {"system": "LOINC", "code": "718-7",
                                  "display": "Hemoglobin", "free_text": "hemoglobin"},
                "value": {"value": 9.8, "unit": "g/dL"},
            })
    items.append({
        "category": "Condition",
        "description": f"final diagnosis of {spec.diagnosis_display}",
        "quote": {"text": f"Final diagnosis: {spec.diagnosis_display}"},
        "proposed_code": {"system": "SNOMED", "code": spec.diagnosis_code,
                          "display": spec.diagnosis_display,
                          "free_text": spec.diagnosis_display},
        "assertion_source": "clinician_concluded",
    })
    payload = {
        "demographics": {"age_years": age, "gender": spec.gender},
        "items": items,
        "primary_diagnosis": {
            "system": "SNOMED",
            "code": spec.diagnosis_code,
            "display": spec.diagnosis_display,
            "free_text": spec.diagnosis_display,
            "synonyms": spec.diagnosis_synonyms,
        },
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def _bundle_response(spec: _CaseSpec, age: int, omit_birth_date: bool = False) -> str:
    cid = f"case_{spec.num:03d}"
    patient_id = rid(f"{cid}:patient")
    birth_year = 2026 - age
    patient = {
        "resourceType": "Patient",
        "id": patient_id,
        "name": [{"use": "official", "given": ["Synthetic"], "family": "Patient"}],
        "gender": spec.gender,
        "birthDate": f"{birth_year}-01-15",
    }
    if omit_birth_date:
        del patient["birthDate"]
    enc_id = rid(f"{cid}:encounter")
    entries = [
        _entry(patient),
        _entry({
            "resourceType": "Encounter",
            "id": enc_id,
            "status": "finished",
            "class": {"system": "http://terminology.hl7.org/CodeSystem/v3-ActCode",
                      "code": "AMB", "display": "ambulatory"},
            "subject": {"reference": f"Patient/{patient_id}"},
            "period": {"start": REFERENCE_DATE, "end": REFERENCE_DATE},
            "reasonCode": [{"text": spec.symptom_phrase}],
        }),
    ]
    if spec.symptom_coding is not None:
        entries.append(_entry(_condition(
            rid(f"{cid}:cond:symptom"), patient_id, spec.symptom_coding,
            spec.symptom_display,
            note=("Tense fluid-filled blisters suggestive of an autoimmune blistering process."
                  if "note_leak" in spec.extras else None))))
    if spec.num % 2 == 0:
        quantity = {"value": 37.8, "unit": "Cel", "code": "Cel",
                    "system": "http://unitsofmeasure.org"}
        obs_code = {"coding": [{"system": LOINC_URI, "code": "8310-5",
                                "display": "Body temperature"}], "text": "body temperature"}
    else:
        quantity = {"value": 88, "unit": "bpm"}
        obs_code = {"coding": [{"system": LOINC_URI, "code": "8867-4",
                                "display": "Heart rate"}], "text": "heart rate"}
    entries.append(_entry({
        "resourceType": "Observation",
        "id": rid(f"{cid}:obs:vital"),
        "status": "final",
        "code": obs_code,
        "subject": {"reference": f"Patient/{patient_id}"},
        "effectiveDateTime": REFERENCE_DATE,
        "valueQuantity": quantity,
    }))
    for extra in spec.extras:
        if extra.startswith("medication:"):
            _, drug, rxcui = extra.split(":")
            entries.append(_entry({
                "resourceType": "MedicationRequest",
                "id": rid(f"{cid}:med:{rxcui}"),
                "status": "active",
                "intent": "order",
                "medicationCodeableConcept": {
                    "coding": [{"system": RXNORM_URI, "code": rxcui, "display": drug}],
                    "text": drug,
                },
                "subject": {"reference": f"Patient/{patient_id}"},
                "authoredOn": REFERENCE_DATE,
            }))
        elif extra == "allergy":
            entries.append(_entry({
                "resourceType": "AllergyIntolerance",
                "id": rid(f"{cid}:allergy"),
                "code": {"text": "penicillin"},
                "patient": {"reference": f"Patient/{patient_id}"},
            }))
        elif extra == "history_asthma":
            entries.append(_entry(_condition(
                rid(f"{cid}:cond:history"), patient_id,
                {"system": SNOMED_URI, "code": "195967001", "display": "Asthma"},
                "known history of asthma", assertion="patient-stated")))
        elif extra == "immunization":
            entries.append(_entry({
                "resourceType": "Immunization",
                "id": rid(f"{cid}:imm"),
                "status": "completed",
                "vaccineCode": {"coding": [{"system": CVX_URI, "code": "141",
                                            "display": "Influenza, seasonal, injectable"}],
                                "text": "flu shot"},
                "patient": {"reference": f"Patient/{patient_id}"},
                "occurrenceDateTime": "2025-10-15",
            }))
        elif extra == "procedure":
            entries.append(_entry({
                "resourceType": "Procedure",
                "id": rid(f"{cid}:proc"),
                "status": "completed",
                "code": {"coding": [{"system": SNOMED_URI, "code": "80146002",
                                     "display": "Appendectomy"}], "text": "appendectomy"},
                "subject": {"reference": f"Patient/{patient_id}"},
                "performedDateTime": "2026-04-29",
            }))
        elif extra == "family_history":
            entries.append(_entry({
                "resourceType": "FamilyMemberHistory",
                "id": rid(f"{cid}:fmh"),
                "status": "completed",
                "patient": {"reference": f"Patient/{patient_id}"},
                "relationship": {"text": "mother"},
                "condition": [{"code": {"text": "iron deficiency anemia"}}],
            }))
        elif extra == "lab_hemoglobin":
            entries.append(_entry({
                "resourceType": "Observation",
                "id": rid(f"{cid}:obs:hgb"),
                "status": "final",
                "code": {"coding": [{"system": LOINC_URI, "code": "718-7",
                                     "display": "Hemoglobin"}], "text": "hemoglobin"},
                "subject": {"reference": f"Patient/{patient_id}"},
                "effectiveDateTime": REFERENCE_DATE,
                "valueQuantity": {"value": 9.8, "unit": "g/dL", "code": "g/dL",
                                  "system": "http://unitsofmeasure.org"},
            }))
        elif extra == "diagnostic_report":
            entries.append(_entry({
                "resourceType": "DiagnosticReport",
                "id": rid(f"{cid}:dr"),
                "status": "final",
                "code": {"text": "sputum culture"},
                "subject": {"reference": f"Patient/{patient_id}"},
                "effectiveDateTime": REFERENCE_DATE,
                "conclusion": f"Findings consistent with {spec.diagnosis_display.lower()}.",
            }))
    entries.append(_entry(_condition(
        rid(f"{cid}:cond:diagnosis"), patient_id,
        {"system": SNOMED_URI, "code": spec.diagnosis_code,
         "display": spec.diagnosis_display},
        f"final diagnosis of {spec.diagnosis_display}")))
    bundle = {"resourceType": "Bundle", "type": "collection", "entry": entries}
    return json.dumps(bundle, indent=2, sort_keys=True)


def _scan_response(spec: _CaseSpec) -> str:
    if "note_leak" in spec.extras:
        return json.dumps([{
            "path": "/entry/2/resource/note/0/text",
            "quote": "autoimmune blistering process",
            "reason": "implies an autoimmune bullous diagnosis",
        }])
    return "[]"


def build_fixture_cases() -> list[FixtureCase]:
    cases = []
    for spec in _CASE_SPECS:
        age = 30 + 3 * spec.num
        cid = f"case_{spec.num:03d}"
        record = CaseRecord(
            case_id=cid,
            split=Split.TEST,
            prompt_text=_source_text(spec, age),
            final_diagnosis=spec.diagnosis_display,
        )
        needs_repair = "repair_needed" in spec.extras
        responses = [_bundle_response(spec, age, omit_birth_date=needs_repair)]
        if needs_repair:
            responses.append(_bundle_response(spec, age))
        cases.append(FixtureCase(
            record=record,
            scenario_response=_scenario_response(spec, age),
            synthesis_responses=responses,
            scan_response=_scan_response(spec),
            diagnosis_name=spec.diagnosis_display,
            diagnosis_synonyms=spec.diagnosis_synonyms,
            diagnosis_code=spec.diagnosis_code,
            age=age,
            should_succeed="grounding_failure" not in spec.extras,
        ))
    return cases
