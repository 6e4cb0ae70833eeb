"""
예외 계층 정의
CLI 종료 코드(exit_code)를 예외 클래스가 직접 들고 다닙니다.
"""

from typing import Optional


class DrPrivacyError(Exception):
    """모든 도메인 예외의 루트"""
    exit_code: int = 1


# ===================================================================
# 설정 / 파라미터 (exit 2)
# ===================================================================

class ConfigError(DrPrivacyError):
    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        if field and field not in message:
            message = f"{field}: {message}"
        super().__init__(message)


class ParameterError(ConfigError):
    """함수 호출 파라미터가 허용 범위를 벗어난 경우"""


# ===================================================================
# 데이터 (exit 3)
# ===================================================================

class DataError(DrPrivacyError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        super().__init__(message)


# ===================================================================
# 수치 계산 (exit 4)
# ===================================================================

class NumericalError(DrPrivacyError):
    exit_code = 4


class DomainError(NumericalError):
    """프라이버시 보장식의 정의역 밖 파라미터"""


class SupportError(NumericalError):
    """지지집합(support) 위반: KL 정의 불가, 흡수 상태 등"""


class DriftError(NumericalError):
    """확률 분포 합이 허용 오차 이상 벗어남"""


class CrossCheckError(NumericalError):
    """닫힌 형태 식과 역방향 평가 결과 불일치"""
